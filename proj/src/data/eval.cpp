#include "canvasmar/data/eval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace canvasmar {

double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("mse: inputs differ in size or are empty");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(std::span<const float> a, std::span<const float> b) {
  const double e = mse(a, b);
  if (e == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

// ---------------------------------------------------------------- embedder

FeatureEmbedder::FeatureEmbedder(FrameShape shape, std::uint64_t seed) : shape_(shape) {
  if (shape.height < 4 || shape.width < 4) throw std::invalid_argument("FeatureEmbedder: frame too small");
  RngStream rng = RngStream::derive(seed, {0x656d6264ULL});
  auto init = [&](Conv& c, int in, int out) {
    c.in = in;
    c.out = out;
    const double sd = std::sqrt(2.0 / (9.0 * in));
    c.weight.resize(static_cast<std::size_t>(out * in * 9));
    for (auto& w : c.weight) w = sd * rng.normal();
    c.bias.resize(static_cast<std::size_t>(out));
    for (auto& b : c.bias) b = 0.1 * rng.normal();
  };
  init(conv1_, shape.channels, channels1_);
  init(conv2_, channels1_, channels2_);
}

std::vector<double> FeatureEmbedder::apply(const Conv& conv, const std::vector<double>& input, int h, int w) const {
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(conv.out * oh * ow));
  for (int o = 0; o < conv.out; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double s = conv.bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < conv.in; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * y + ky - 1;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * x + kx - 1;
              if (ix < 0 || ix >= w) continue;
              s += conv.weight[static_cast<std::size_t>(((o * conv.in + i) * 3 + ky) * 3 + kx)] *
                   input[static_cast<std::size_t>((i * h + iy) * w + ix)];
            }
          }
        }
        out[static_cast<std::size_t>((o * oh + y) * ow + x)] = std::max(0.0, s);
      }
    }
  }
  return out;
}

Eigen::VectorXd FeatureEmbedder::embed(const VideoTensor& clip) const {
  if (!(clip.frame_shape() == shape_)) throw std::invalid_argument("FeatureEmbedder: clip resolution mismatch");
  if (clip.frames() < 1 || clip.frames() > kMaxFrames) {
    throw std::invalid_argument("FeatureEmbedder: clips must have 1.." + std::to_string(kMaxFrames) + " frames");
  }
  const int h = shape_.height, w = shape_.width, c = shape_.channels;
  const int h1 = (h + 1) / 2, w1 = (w + 1) / 2, h2 = (h1 + 1) / 2, w2 = (w1 + 1) / 2;
  const Index pooled = channels2_ * 4;
  Eigen::MatrixXd per_frame(clip.frames(), pooled);
  for (int f = 0; f < clip.frames(); ++f) {
    std::vector<double> planar(static_cast<std::size_t>(c * h * w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) planar[static_cast<std::size_t>((ch * h + y) * w + x)] = clip.at(f, y, x, ch) - 0.5;
    const std::vector<double> a = apply(conv2_, apply(conv1_, planar, h, w), h1, w1);
    for (int o = 0; o < channels2_; ++o) {
      for (int q = 0; q < 4; ++q) {
        const int y0 = (q / 2) * h2 / 2, y1 = (q / 2 + 1) * h2 / 2;
        const int x0 = (q % 2) * w2 / 2, x1 = (q % 2 + 1) * w2 / 2;
        double s = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) s += a[static_cast<std::size_t>((o * h2 + y) * w2 + x)];
        per_frame(f, o * 4 + q) = s / std::max(1, (y1 - y0) * (x1 - x0));
      }
    }
  }
  Eigen::VectorXd feat = Eigen::VectorXd::Zero(dim());
  feat.head(pooled) = per_frame.colwise().mean().transpose();
  if (clip.frames() > 1) {
    const Eigen::MatrixXd diff = per_frame.bottomRows(clip.frames() - 1) - per_frame.topRows(clip.frames() - 1);
    feat.tail(pooled) = diff.cwiseAbs().colwise().mean().transpose();
  }
  return feat;
}

Eigen::MatrixXd FeatureEmbedder::embed_all(std::span<const VideoTensor> clips) const {
  Eigen::MatrixXd out(static_cast<Index>(clips.size()), dim());
  for (std::size_t i = 0; i < clips.size(); ++i) out.row(static_cast<Index>(i)) = embed(clips[i]).transpose();
  return out;
}

// ---------------------------------------------------------------- Frechet

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_proxy(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake) {
  if (real.rows() < 2 || fake.rows() < 2) throw std::invalid_argument("frechet_proxy: need at least 2 samples per set");
  if (real.cols() != fake.cols()) throw std::invalid_argument("frechet_proxy: feature dimensions differ");
  auto moments = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
  };
  Eigen::VectorXd mu_r, mu_f;
  Eigen::MatrixXd cov_r, cov_f;
  moments(real, mu_r, cov_r);
  moments(fake, mu_f, cov_f);
  const Eigen::MatrixXd root_r = sqrt_psd(cov_r);
  const Eigen::MatrixXd inner = root_r * cov_f * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu_r - mu_f).squaredNorm() + cov_r.trace() + cov_f.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

// ---------------------------------------------------------------- predictors

std::vector<VideoTensor> OracleReplayPredictor::predict(const VideoTensor& truth, int start, int cond_frames,
                                                        int num_new, std::span<const std::uint64_t> seeds) const {
  return std::vector<VideoTensor>(seeds.size(), truth.slice(start, cond_frames + num_new));
}

std::vector<VideoTensor> NoisePredictor::predict(const VideoTensor& truth, int start, int cond_frames, int num_new,
                                                 std::span<const std::uint64_t> seeds) const {
  std::vector<VideoTensor> out;
  for (std::uint64_t seed : seeds) {
    VideoTensor v = truth.slice(start, cond_frames);
    RngStream rng = RngStream::derive(seed, {0x6e6f6973ULL});
    std::vector<float> frame(static_cast<std::size_t>(truth.frame_shape().pixels()));
    for (int f = 0; f < num_new; ++f) {
      for (auto& p : frame) p = static_cast<float>(rng.uniform());
      v.append_frame(frame);
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<VideoTensor> CanvasMarPredictor::predict(const VideoTensor& truth, int start, int cond_frames,
                                                     int num_new, std::span<const std::uint64_t> seeds) const {
  const VideoTensor cond = truth.slice(start, cond_frames);
  std::vector<VideoTensor> out;
  for (std::size_t begin = 0; begin < seeds.size(); begin += static_cast<std::size_t>(max_batch_)) {
    const std::size_t count = std::min(seeds.size() - begin, static_cast<std::size_t>(max_batch_));
    const std::vector<VideoTensor> conds(count, cond);
    for (auto& r : rollout_batch(model_, std::span<const VideoTensor>(conds), num_new, config_,
                                 seeds.subspan(begin, count))) {
      out.push_back(std::move(r.video));
    }
  }
  return out;
}

// ---------------------------------------------------------------- protocols

namespace {

void check_eval(std::span<const VideoTensor> dataset, const EvalConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("evaluation: empty dataset");
  if (config.test_clips < 2) throw std::invalid_argument("evaluation: need at least 2 test clips");
  if (static_cast<std::size_t>(config.test_clips) > dataset.size()) {
    throw std::invalid_argument("evaluation: dataset has " + std::to_string(dataset.size()) + " clips, " +
                                std::to_string(config.test_clips) + " requested");
  }
  if (config.cond_frames < 1 || config.clip_frames <= config.cond_frames) {
    throw std::invalid_argument("evaluation: clip_frames must exceed cond_frames >= 1");
  }
  for (int c = 0; c < config.test_clips; ++c) {
    if (dataset[static_cast<std::size_t>(c)].frames() < config.clip_frames) {
      throw std::invalid_argument("evaluation: clip " + std::to_string(c) + " is too short for a " +
                                  std::to_string(config.clip_frames) + "-frame window");
    }
  }
}

double generated_psnr(const VideoTensor& fake, const VideoTensor& real, int cond_frames) {
  double s = 0;
  int n = 0;
  for (int f = cond_frames; f < real.frames(); ++f, ++n) s += std::min(100.0, psnr(fake.frame(f), real.frame(f)));
  return n > 0 ? s / n : 0.0;
}

EvalResult finish(std::string protocol, const EvalConfig& config, const std::vector<VideoTensor>& real,
                  const std::vector<VideoTensor>& fake, double psnr_sum, const FeatureEmbedder& embedder) {
  EvalResult r;
  r.protocol = std::move(protocol);
  r.seed = config.seed;
  r.real_count = static_cast<int>(real.size());
  r.fake_count = static_cast<int>(fake.size());
  r.score = frechet_proxy(embedder.embed_all(real), embedder.embed_all(fake));
  r.psnr = psnr_sum / static_cast<double>(fake.size());
  return r;
}

}  // namespace

EvalResult eval_protocol_standard(const VideoPredictor& model, std::span<const VideoTensor> dataset,
                                  const EvalConfig& config, const FeatureEmbedder& embedder) {
  check_eval(dataset, config);
  if (config.samples_per_condition < 1) throw std::invalid_argument("evaluation: samples_per_condition must be >= 1");
  std::vector<VideoTensor> real, fake;
  double psnr_sum = 0;
  for (int c = 0; c < config.test_clips; ++c) {
    const VideoTensor& truth = dataset[static_cast<std::size_t>(c)];
    real.push_back(truth.slice(0, config.clip_frames));
    std::vector<std::uint64_t> seeds;
    for (int m = 0; m < config.samples_per_condition; ++m) {
      seeds.push_back(RngStream::derive(config.seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(m)}).next_u64());
    }
    for (auto& v : model.predict(truth, 0, config.cond_frames, config.clip_frames - config.cond_frames, seeds)) {
      psnr_sum += generated_psnr(v, real.back(), config.cond_frames);
      fake.push_back(std::move(v));
    }
  }
  return finish("standard", config, real, fake, psnr_sum, embedder);
}

EvalResult eval_protocol_debiased(const VideoPredictor& model, std::span<const VideoTensor> dataset,
                                  const EvalConfig& config, const FeatureEmbedder& embedder) {
  check_eval(dataset, config);
  if (config.repeats < 1) throw std::invalid_argument("evaluation: repeats must be >= 1");
  std::vector<VideoTensor> real, fake;
  std::vector<std::vector<int>> starts;
  double psnr_sum = 0;
  for (int r = 0; r < config.repeats; ++r) {
    starts.emplace_back();
    for (int c = 0; c < config.test_clips; ++c) {
      const VideoTensor& truth = dataset[static_cast<std::size_t>(c)];
      RngStream rng = RngStream::derive(config.seed, {0x77696e64ULL, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)});
      const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(truth.frames() - config.clip_frames + 1)));
      starts.back().push_back(start);
      real.push_back(truth.slice(start, config.clip_frames));
      const std::uint64_t seed = rng.next_u64();
      VideoTensor v = model.predict(truth, start, config.cond_frames, config.clip_frames - config.cond_frames,
                                    std::span<const std::uint64_t>(&seed, 1))
                          .front();
      psnr_sum += generated_psnr(v, real.back(), config.cond_frames);
      fake.push_back(std::move(v));
    }
  }
  EvalResult result = finish("debiased", config, real, fake, psnr_sum, embedder);
  result.window_starts = std::move(starts);
  return result;
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string metrics_json(const EvalResult& result, const std::string& hash) {
  nlohmann::json j;
  j["protocol"] = result.protocol;
  j["seed"] = result.seed;
  j["score"] = result.score;
  j["psnr"] = result.psnr;
  j["real_clips"] = result.real_count;
  j["fake_clips"] = result.fake_count;
  j["config_hash"] = hash;
  if (!result.window_starts.empty()) j["window_starts"] = result.window_starts;
  return j.dump();
}

}  // namespace canvasmar
