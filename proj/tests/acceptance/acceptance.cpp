// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; the default runs all eleven.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "canvasmar/cli/run_config.hpp"
#include "canvasmar/data/eval.hpp"
#include "canvasmar/data/synthetic.hpp"
#include "canvasmar/training/training.hpp"

using namespace canvasmar;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

/// Random parameters so that no block starts in a degenerate (zero) state.
template <typename Scalar>
void randomize(const ParamList<Scalar>& params, std::uint64_t seed, double scale) {
  RngStream rng(seed);
  for (const auto& [name, t] : params) {
    Tensor<Scalar> handle = t;
    handle.mutable_value() += gaussian<Scalar>(rng, t.rows(), t.cols()) * static_cast<Scalar>(scale);
  }
}

template <typename Scalar>
Tensor<Scalar> find_param(const ParamList<Scalar>& params, const std::string& name) {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw std::invalid_argument("no parameter named " + name);
}

VideoTensor random_video(int frames, const FrameShape& shape, std::uint64_t seed) {
  RngStream rng(seed);
  VideoTensor v(frames, shape);
  for (float& x : v.data()) x = static_cast<float>(rng.uniform());
  return v;
}

Matrix<float> stack_tokens(const std::vector<TokenGrid>& grids) {
  Matrix<float> out(static_cast<Index>(grids.size()) * grids.front().tokens.rows(), grids.front().tokens.cols());
  for (std::size_t f = 0; f < grids.size(); ++f)
    out.middleRows(static_cast<Index>(f) * grids[f].tokens.rows(), grids[f].tokens.rows()) = grids[f].tokens;
  return out;
}

// ---------------------------------------------------------------- 1

/// Relative gradient error of one leaf: the analytic gradient comes from a
/// float32 tape; the reference is a float64 central difference of the same
/// block (identical parameter values), so the check measures the float32
/// backward pass rather than float32 rounding in the difference quotient.
struct GradSite {
  std::string label;
  std::function<Tensor<float>()> loss32;
  Tensor<float> leaf32;
  std::function<double()> loss64;
  Tensor<double> leaf64;
};

struct GradErrors {
  double mixed = 0;       // float32 tape vs float64 differences
  double pure32 = 0;      // float32 tape vs float32 differences (informational)
};

GradErrors grad_errors(GradSite& s) {
  MatrixF analytic;
  {
    GradTape<float> tape;
    TapeScope<float> scope(tape);
    analytic = backward(tape, s.loss32()).of(s.leaf32);
  }
  GradErrors e;
  NoGradScope<float> ng32;
  NoGradScope<double> ng64;
  const Index stride = std::max<Index>(1, s.leaf64.value().size() / 48);
  for (Index i = 0; i < analytic.size(); i += stride) {
    const double a = analytic.data()[i];
    {
      const double eps = 1e-6;
      double& p = s.leaf64.mutable_value().data()[i];
      const double o = p;
      p = o + eps;
      const double up = s.loss64();
      p = o - eps;
      const double down = s.loss64();
      p = o;
      e.mixed = std::max(e.mixed, std::abs(a - (up - down) / (2 * eps)) / (std::abs(a) + 1e-8));
    }
    {
      const float eps = 1e-2f;
      float& p = s.leaf32.mutable_value().data()[i];
      const float o = p;
      p = o + eps;
      const double up = s.loss32().item();
      p = o - eps;
      const double down = s.loss32().item();
      p = o;
      e.pure32 = std::max(e.pure32, std::abs(a - (up - down) / ((double(o) + eps) - (double(o) - eps))) /
                                        (std::abs(a) + 1e-8));
    }
  }
  return e;
}

template <typename T>
struct ScalarOf;
template <typename S>
struct ScalarOf<Tensor<S>> {
  using type = S;
};
template <typename T>
using scalar_of = typename ScalarOf<std::decay_t<T>>::type;

template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& y, const MatrixD& w) {
  return sum(mul(y, constant<Scalar>(w.cast<Scalar>())));
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::vector<GradSite> sites;
  RngStream data(101);
  const Index dim = 16;

  // Attention: softmax(QK^T) V under the hybrid mask, through the block's projections.
  auto block32 = std::make_shared<TransformerBlock<float>>(dim, 2, 2, true, data, "blk");
  auto block64 = std::make_shared<TransformerBlock<double>>();
  {
    RngStream r(5);
    *block64 = TransformerBlock<double>(dim, 2, 2, true, r, "blk");
    ParamList<float> p32;
    block32->collect(p32);
    randomize(p32, 6, 0.3);
    ParamList<double> p64;
    block64->collect(p64);
    copy_parameters(p32, p64);
  }
  const AttentionMask mask = build_hybrid_mask(3, 2);
  const MatrixD w_att = gaussian<double>(data, 6, dim);
  auto attn = [mask, w_att](const auto& b, const auto& x) {
    using S = scalar_of<decltype(x)>;
    return weighted_sum<S>(b.to_out(attention(b.to_q(x), b.to_k(x), b.to_v(x), mask, b.heads)), w_att);
  };
  {
    auto x32 = std::make_shared<Tensor<float>>(gaussian<float>(data, 6, dim), true);
    auto x64 = std::make_shared<Tensor<double>>(x32->value().cast<double>(), true);
    sites.push_back({"attention / input", [=] { return attn(*block32, *x32); }, *x32,
                     [=] { return attn(*block64, *x64).item(); }, *x64});
    ParamList<float> p32;
    block32->collect(p32);
    ParamList<double> p64;
    block64->collect(p64);
    for (const char* n : {"blk.q.weight", "blk.k.weight", "blk.v.bias"}) {
      sites.push_back({std::string("attention / ") + n, [=] { return attn(*block32, *x32); }, find_param(p32, n),
                       [=] { return attn(*block64, *x64).item(); }, find_param(p64, n)});
    }
    // The whole pre-norm block, dual MLP routing included.
    auto route = std::make_shared<RowRoute>(RowRoute{{0, 2, 4}, {1, 3, 5}});
    auto blk = [mask, w_att, route](const auto& b, const auto& x) {
      using S = scalar_of<decltype(x)>;
      return weighted_sum<S>(b.forward(x, mask, route.get()), w_att);
    };
    sites.push_back({"transformer block / input", [=] { return blk(*block32, *x32); }, *x32,
                     [=] { return blk(*block64, *x64).item(); }, *x64});
  }

  // MLP: Linear -> GELU -> Linear.
  {
    RngStream r(7);
    auto mlp32 = std::make_shared<Mlp<float>>(dim, 32, dim, r, "mlp");
    RngStream r2(7);
    auto mlp64 = std::make_shared<Mlp<double>>(dim, 32, dim, r2, "mlp");
    ParamList<float> p32;
    mlp32->collect(p32);
    randomize(p32, 8, 0.3);
    ParamList<double> p64;
    mlp64->collect(p64);
    copy_parameters(p32, p64);
    const MatrixD w = gaussian<double>(data, 5, dim);
    auto x32 = std::make_shared<Tensor<float>>(gaussian<float>(data, 5, dim), true);
    auto x64 = std::make_shared<Tensor<double>>(x32->value().cast<double>(), true);
    auto f = [w](const auto& m, const auto& x) {
      using S = scalar_of<decltype(x)>;
      return weighted_sum<S>(m(x), w);
    };
    sites.push_back({"mlp / input", [=] { return f(*mlp32, *x32); }, *x32, [=] { return f(*mlp64, *x64).item(); },
                     *x64});
    for (const char* n : {"mlp.fc1.weight", "mlp.fc2.weight", "mlp.fc1.bias"}) {
      sites.push_back({std::string("mlp / ") + n, [=] { return f(*mlp32, *x32); }, find_param(p32, n),
                       [=] { return f(*mlp64, *x64).item(); }, find_param(p64, n)});
    }
  }

  // Canvas head and projection, and the flow head, on a small model.
  ModelConfig c;
  c.height = c.width = 16;
  c.dim = dim;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.flow_dim = 32;
  c.flow_steps = 4;
  auto m32 = std::make_shared<CanvasMar<float>>(c, 9);
  randomize(m32->parameters(), 10, 0.2);
  auto m64 = std::make_shared<CanvasMar<double>>(m32->cast<double>());
  const ParamList<float> mp32 = m32->parameters();
  const ParamList<double> mp64 = m64->parameters();
  {
    const MatrixD w = gaussian<double>(data, c.tokens(), c.token_dim());
    auto x32 = std::make_shared<Tensor<float>>(gaussian<float>(data, c.tokens(), dim), true);
    auto x64 = std::make_shared<Tensor<double>>(x32->value().cast<double>(), true);
    auto f = [w](const auto& m, const auto& x) {
      using S = scalar_of<decltype(x)>;
      return weighted_sum<S>(m.canvas.project(m.canvas.head(0, x)), w);
    };
    sites.push_back({"canvas projection / input", [=] { return f(*m32, *x32); }, *x32,
                     [=] { return f(*m64, *x64).item(); }, *x64});
    for (const char* n : {"canvas.projection.weight", "canvas.projection.bias", "canvas.head0.fc1.weight"}) {
      sites.push_back({std::string("canvas projection / ") + n, [=] { return f(*m32, *x32); }, find_param(mp32, n),
                       [=] { return f(*m64, *x64).item(); }, find_param(mp64, n)});
    }
  }
  {
    const MatrixD w = gaussian<double>(data, 4, c.token_dim());
    auto xt32 = std::make_shared<Tensor<float>>(gaussian<float>(data, 4, c.token_dim()), true);
    auto xt64 = std::make_shared<Tensor<double>>(xt32->value().cast<double>(), true);
    auto z32 = std::make_shared<Tensor<float>>(gaussian<float>(data, 4, dim), true);
    auto z64 = std::make_shared<Tensor<double>>(z32->value().cast<double>(), true);
    const std::vector<double> t{0.1, 0.4, 0.7, 0.95};
    auto f = [w, t](const auto& m, const auto& x, const auto& z) {
      using S = scalar_of<decltype(x)>;
      return weighted_sum<S>(m.flow.velocity(x, std::vector<S>(t.begin(), t.end()), z), w);
    };
    sites.push_back({"flow head / x_t", [=] { return f(*m32, *xt32, *z32); }, *xt32,
                     [=] { return f(*m64, *xt64, *z64).item(); }, *xt64});
    sites.push_back({"flow head / z", [=] { return f(*m32, *xt32, *z32); }, *z32,
                     [=] { return f(*m64, *xt64, *z64).item(); }, *z64});
    for (const char* n : {"flow.in_t.weight", "flow.hidden1.weight", "flow.out.bias"}) {
      sites.push_back({std::string("flow head / ") + n, [=] { return f(*m32, *xt32, *z32); }, find_param(mp32, n),
                       [=] { return f(*m64, *xt64, *z64).item(); }, find_param(mp64, n)});
    }
  }

  double worst = 0, worst32 = 0;
  std::string worst_label;
  for (auto& s : sites) {
    const GradErrors e = grad_errors(s);
    std::cerr << "  .. " << s.label << ": " << fmt(e.mixed) << " (float32 differences: " << fmt(e.pure32) << ")\n";
    if (e.mixed > worst) {
      worst = e.mixed;
      worst_label = s.label;
    }
    worst32 = std::max(worst32, e.pure32);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-3 && t < 60.0,
          std::to_string(sites.size()) + " sites, max rel err " + fmt(worst) + " at " + worst_label +
              " (float32 tape vs float64 differences; all-float32 differences reach " + fmt(worst32) + "), " +
              fmt(t) + " s"};
}

// ---------------------------------------------------------------- 2, 3

CanvasMar<float> random_desk_model(std::uint64_t seed) {
  CanvasMar<float> m(ModelConfig{}, seed);
  randomize(m.parameters(), seed + 1, 0.05);
  return m;
}

Outcome criterion2() {
  const CanvasMar<float> m = random_desk_model(21);
  const auto h = patchify_video(random_video(8, m.config.frame_shape(), 22), m.config.patch);
  NoGradScope<float> ng;
  KVCache<float> cache;
  double worst = 0;
  for (std::size_t f = 1; f <= h.size(); ++f) {
    const std::span<const TokenGrid> prefix(h.data(), f);
    const auto cached = temporal_forward(m, prefix, &cache);
    const auto full = temporal_forward(m, prefix);
    worst = std::max<double>(worst, (cached.zt.value() - full.zt.value()).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-5, "8 frames, max abs diff " + fmt(worst)};
}

Outcome criterion3() {
  const CanvasMar<float> m = random_desk_model(31);
  const int frames = 8;
  const Index n = m.config.tokens();
  const VideoTensor video = random_video(frames, m.config.frame_shape(), 32);
  NoGradScope<float> ng;
  const MatrixF base = m.temporal.forward(stack_tokens(patchify_video(video, m.config.patch)), frames).value();
  double worst_kept = 0, least_moved = 1e30;
  for (int j = 0; j < frames; ++j) {
    VideoTensor edited = video;
    const VideoTensor noise = random_video(1, video.frame_shape(), 33 + j);
    std::copy(noise.data().begin(), noise.data().end(), edited.frame(j).begin());
    const MatrixF out = m.temporal.forward(stack_tokens(patchify_video(edited, m.config.patch)), frames).value();
    // Output rows of frame f are zt(f + 1): rows of frames < j give zt(i), i <= j.
    if (j > 0) worst_kept = std::max<double>(worst_kept, (out.topRows(j * n) - base.topRows(j * n)).cwiseAbs().maxCoeff());
    least_moved = std::min<double>(least_moved, (out.middleRows(j * n, n) - base.middleRows(j * n, n)).cwiseAbs().maxCoeff());
  }
  return {worst_kept < 1e-6 && least_moved > 1e-6,
          "max change of zt(i<=j) " + fmt(worst_kept) + "; zt(j+1) moves by >= " + fmt(least_moved)};
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
  RngStream rng(41);
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixF u = gaussian<float>(rng, 16, 16) * 3.0f, t = gaussian<float>(rng, 16, 16) * 3.0f,
                  st = gaussian<float>(rng, 16, 16) * 3.0f;
    exact = exact && cfg_velocity<float>(u, t, st, {1.0, 1.0}) == st;
    exact = exact && cfg_velocity<float>(u, t, st, {0.0, 1.0}) == t;
    exact = exact && cfg_velocity<float>(u, t, st, {0.0, 0.0}) == u;
  }
  CanvasMar<float> m = random_desk_model(42);
  const VideoTensor cond = random_video(2, m.config.frame_shape(), 43);
  RolloutConfig guided, plain;
  guided.decode.guidance = GuidanceScales{1.0, 1.0};
  const VideoTensor a = rollout(m, cond, 3, guided, 44).video;
  const VideoTensor b = rollout(m, cond, 3, plain, 44).video;
  return {exact && a == b, std::string("reductions ") + (exact ? "exact" : "NOT exact") +
                               "; 3-frame rollout with w=(1,1) vs no guidance: " +
                               (a == b ? "bitwise equal" : "DIFFERENT")};
}

// ---------------------------------------------------------------- 5

Outcome criterion5() {
  const auto t0 = Clock::now();
  long cases = 0, bad = 0;
  for (Index n = 1; n <= 1024; ++n) {
    for (Index k = 1; k <= n; ++k) {
      const auto sizes = cosine_set_sizes(n, k);
      ++cases;
      bool ok = static_cast<Index>(sizes.size()) == k &&
                std::accumulate(sizes.begin(), sizes.end(), Index{0}) == n &&
                std::all_of(sizes.begin(), sizes.end(), [](Index s) { return s >= 1; });
      const auto curve = masked_count_curve(sizes);
      ok = ok && curve.front() == n && curve.back() == 0;
      for (std::size_t i = 1; ok && i < curve.size(); ++i) ok = curve[i] < curve[i - 1];
      bad += !ok;
    }
  }
  const double t = seconds_since(t0);
  return {bad == 0 && t < 10.0, std::to_string(cases) + " (n, K) pairs, " + std::to_string(bad) + " violations, " +
                                    fmt(t) + " s"};
}

// ---------------------------------------------------------------- 6

constexpr long kCoinflipSteps = 600;

Outcome criterion6() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.kind = DatasetKind::coinflip;
  spec.clips = 256;
  spec.frames = 2;
  spec.seed = 61;
  const auto data = gen_coinflip(spec);
  const auto [a, b] = coinflip_outcomes(spec);

  CanvasMar<float> m(ModelConfig{}, 62);
  TrainConfig tc;
  tc.adam.learning_rate = 5e-4;
  tc.adam.warmup_steps = 50;
  auto opt = OptState<float>::zeros_like(m.parameters(), tc.adam);
  TrainLoopOptions lo;
  lo.steps = kCoinflipSteps;
  lo.batch_size = 8;
  lo.clip_frames = 2;
  lo.seed = 63;
  train_loop(m, opt, data, tc, lo, [&](const StepMetrics& s) {
    if (s.step % 100 == 0) progress("coin-flip step " + std::to_string(s.step) + " canvas loss " + fmt(s.canvas_loss));
  });

  NoGradScope<float> ng;
  const auto hist = patchify_video(data.front().slice(0, 1), m.config.patch);
  const auto zt = temporal_forward(m, std::span<const TokenGrid>(hist));
  const auto zs = canvas_forward(m, zt, hist.back(), 1);
  std::vector<float> canvas = unpatchify(canvas_project(m, zs.front()).tokens, m.config.frame_shape(), m.config.patch);
  for (float& v : canvas) v = std::clamp(v, 0.0f, 1.0f);
  std::vector<float> mean(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mean[i] = 0.5f * (a[i] + b[i]);
  const double ratio = mse(canvas, mean) / mse(a, b);
  const double t = seconds_since(t0);
  return {ratio < 0.25 && t < 1200.0, std::to_string(kCoinflipSteps) + " steps, MSE(canvas, (A+B)/2) / MSE(A, B) = " +
                                          fmt(ratio) + ", " + fmt(t) + " s"};
}

// ---------------------------------------------------------------- 7, 10 (shared bouncing models)

struct BouncingSetup {
  long steps = 2000;
  int batch = 8;
  int frames = 4;
  double learning_rate = 1e-3;
  int warmup = 100;
  std::uint64_t train_seed = 71;
};

std::vector<VideoTensor> bouncing_set(int clips, std::uint64_t seed) {
  SyntheticSpec s;
  s.clips = clips;
  s.frames = 8;
  s.seed = seed;
  return gen_bouncing(s);
}

struct TrainedModel {
  CanvasMar<float> model;
  std::vector<double> canvas_losses;
  double seconds = 0;
};

const TrainedModel& bouncing_model(bool use_canvas) {
  static std::map<bool, std::unique_ptr<TrainedModel>> cache;
  auto& slot = cache[use_canvas];
  if (slot) return *slot;
  const BouncingSetup setup;
  const auto t0 = Clock::now();
  static const std::vector<VideoTensor> train = bouncing_set(512, 72);
  ModelConfig c;
  c.use_canvas = use_canvas;
  slot = std::make_unique<TrainedModel>();
  slot->model = CanvasMar<float>(c, 73);
  TrainConfig tc;
  tc.adam.learning_rate = setup.learning_rate;
  tc.adam.warmup_steps = setup.warmup;
  auto opt = OptState<float>::zeros_like(slot->model.parameters(), tc.adam);
  TrainLoopOptions lo;
  lo.steps = setup.steps;
  lo.batch_size = setup.batch;
  lo.clip_frames = setup.frames;
  lo.seed = setup.train_seed;
  double window = 0;
  train_loop(slot->model, opt, train, tc, lo, [&](const StepMetrics& s) {
    slot->canvas_losses.push_back(s.canvas_loss);
    window += s.flow_loss;
    if (s.step % 200 == 0) {
      progress(std::string(use_canvas ? "canvas" : "no-canvas") + " model step " + std::to_string(s.step) +
               " mean flow loss " + fmt(window / 200) + " (" + fmt(seconds_since(t0)) + " s)");
      window = 0;
    }
  });
  slot->seconds = seconds_since(t0);
  return *slot;
}

Outcome criterion7() {
  const auto t0 = Clock::now();
  const auto test = bouncing_set(32, 74);
  const FeatureEmbedder embedder(test.front().frame_shape());
  EvalConfig ec;
  ec.test_clips = 32;
  ec.samples_per_condition = 4;
  ec.cond_frames = 2;
  ec.clip_frames = BouncingSetup{}.frames;
  ec.seed = 75;
  std::map<bool, std::map<int, double>> score;
  for (bool use_canvas : {true, false}) {
    const TrainedModel& tm = bouncing_model(use_canvas);
    for (int k : {2, 3, 6}) {
      RolloutConfig rc;
      rc.decode.steps = k;
      const CanvasMarPredictor predictor(tm.model, rc);
      score[use_canvas][k] = eval_protocol_standard(predictor, test, ec, embedder).score;
      progress(std::string(use_canvas ? "canvas" : "no-canvas") + " K=" + std::to_string(k) + " score " +
               fmt(score[use_canvas][k]));
    }
  }
  bool lower_everywhere = true;
  std::string table;
  for (int k : {2, 3, 6}) {
    lower_everywhere = lower_everywhere && score[true][k] < score[false][k];
    table += " K=" + std::to_string(k) + ": " + fmt(score[true][k]) + " vs " + fmt(score[false][k]) + ";";
  }
  const double gain = 1.0 - score[true][2] / score[false][2];
  const double t = seconds_since(t0);
  return {gain >= 0.2 && lower_everywhere && t < 7200.0,
          "canvas vs no-canvas" + table + " K=2 reduction " + fmt(100 * gain) + "%, " + fmt(t) + " s"};
}

// ---------------------------------------------------------------- 8

/// Samples whose sample mean and (n - 1)-normalized covariance equal mu and
/// cov exactly, built by whitening Gaussian draws.
Eigen::MatrixXd exact_moments(const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov, int n, RngStream& rng) {
  Eigen::MatrixXd z = gaussian<double>(rng, n, 2);
  z = z.rowwise() - z.colwise().mean();
  const Eigen::Matrix2d sample = z.transpose() * z / (n - 1);
  const Eigen::Matrix2d l_sample = sample.llt().matrixL();
  const Eigen::Matrix2d l_target = cov.llt().matrixL();
  Eigen::MatrixXd x = z * l_sample.transpose().inverse() * l_target.transpose();
  return x.rowwise() + mu.transpose();
}

/// Closed form for 2x2 covariances: tr sqrt(A B) = sqrt(tr(AB) + 2 sqrt(det(AB))).
double frechet_2d(const Eigen::Vector2d& m1, const Eigen::Matrix2d& c1, const Eigen::Vector2d& m2,
                  const Eigen::Matrix2d& c2) {
  const Eigen::Matrix2d p = c1 * c2;
  const double cross = std::sqrt(p.trace() + 2.0 * std::sqrt(p.determinant()));
  return (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * cross;
}

Outcome criterion8() {
  RngStream rng(81);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector2d m1, m2;
    m1 << rng.uniform(-2, 2), rng.uniform(-2, 2);
    m2 << rng.uniform(-2, 2), rng.uniform(-2, 2);
    auto random_cov = [&] {
      Eigen::Matrix2d a;
      a << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
      Eigen::Matrix2d c = a * a.transpose();
      c.diagonal().array() += 0.1;
      // Every third trial uses diagonal covariances.
      if (trial % 3 == 0) c = Eigen::Matrix2d(c.diagonal().asDiagonal());
      return c;
    };
    const Eigen::Matrix2d c1 = random_cov(), c2 = random_cov();
    const double got = frechet_proxy(exact_moments(m1, c1, 200, rng), exact_moments(m2, c2, 300, rng));
    worst = std::max(worst, std::abs(got - frechet_2d(m1, c1, m2, c2)));
  }
  const Eigen::MatrixXd x = gaussian<double>(rng, 256, 64);
  const double same = frechet_proxy(x, x);
  return {worst < 1e-6 && same < 1e-6, "50 Gaussian pairs, max |proxy - closed form| " + fmt(worst) +
                                           "; identical 64-d sets score " + fmt(same)};
}

// ---------------------------------------------------------------- 9

Outcome criterion9() {
  SyntheticSpec s;
  s.clips = 20;
  s.frames = 16;
  s.height = s.width = 16;
  s.size = 3;
  s.seed = 91;
  const auto data = gen_bouncing(s);
  const FeatureEmbedder embedder(s.frame_shape());
  EvalConfig ec;
  ec.test_clips = 20;
  ec.samples_per_condition = 5;
  ec.repeats = 6;
  ec.cond_frames = 2;
  ec.clip_frames = 6;
  ec.seed = 92;
  const NoisePredictor model;
  const EvalResult standard = eval_protocol_standard(model, data, ec, embedder);
  const EvalResult debiased = eval_protocol_debiased(model, data, ec, embedder);
  int redrawn = 0;
  for (int c = 0; c < ec.test_clips; ++c) {
    std::set<int> starts;
    for (const auto& rep : debiased.window_starts) starts.insert(rep[static_cast<std::size_t>(c)]);
    redrawn += starts.size() > 1;
  }
  const bool pass = standard.fake_count == ec.test_clips * ec.samples_per_condition &&
                    debiased.fake_count == ec.test_clips * ec.repeats &&
                    static_cast<int>(debiased.window_starts.size()) == ec.repeats && redrawn == ec.test_clips;
  return {pass, "standard fake clips " + std::to_string(standard.fake_count) + " (= 20 x 5); debiased fake clips " +
                    std::to_string(debiased.fake_count) + " (= 20 x 6); windows re-drawn for " +
                    std::to_string(redrawn) + "/20 clips"};
}

// ---------------------------------------------------------------- 10

double median_rollout_seconds(const CanvasMar<float>& m, int group, int runs) {
  const VideoTensor cond = random_video(1, m.config.frame_shape(), 101);
  RolloutConfig rc;
  rc.group = group;
  std::vector<double> t;
  rollout(m, cond, 2, rc, 100);  // warm-up
  for (int r = 0; r < runs; ++r) {
    const auto t0 = Clock::now();
    rollout(m, cond, 6, rc, 102 + r);
    t.push_back(seconds_since(t0));
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

Outcome criterion10() {
  // Throughput at batch 1: the same trained weights decoded one frame per
  // temporal step (G=1) and two frames per step (G=2).
  const TrainedModel& base = bouncing_model(true);
  CanvasMar<float> grouped = base.model;
  grouped.set_group_size(2);
  const double t1 = median_rollout_seconds(base.model, 1, 5);
  const double t2 = median_rollout_seconds(grouped, 2, 5);
  const double speedup = t1 / t2;

  // Finetune the next-frame checkpoint into a next-group model.
  const BouncingSetup setup;
  const long base_steps = setup.steps;
  const std::size_t tail = base.canvas_losses.size() / 10;
  const double base_loss =
      std::accumulate(base.canvas_losses.end() - static_cast<long>(tail), base.canvas_losses.end(), 0.0) / tail;
  static const std::vector<VideoTensor> train = bouncing_set(512, 72);
  TrainConfig tc;
  tc.group = 2;
  tc.adam.learning_rate = setup.learning_rate;
  tc.adam.warmup_steps = 20;
  auto opt = OptState<float>::zeros_like(grouped.parameters(), tc.adam);
  TrainLoopOptions lo;
  lo.steps = base_steps * 15 / 100;
  lo.batch_size = setup.batch;
  lo.clip_frames = setup.frames;
  lo.seed = setup.train_seed + 1;
  const int window = 25;
  std::vector<double> losses;
  long converged_at = -1;
  train_loop(grouped, opt, train, tc, lo, [&](const StepMetrics& s) {
    losses.push_back(s.canvas_loss);
    if (converged_at < 0 && losses.size() >= static_cast<std::size_t>(window)) {
      const double recent = std::accumulate(losses.end() - window, losses.end(), 0.0) / window;
      if (recent <= 1.1 * base_loss) converged_at = s.step;
    }
  });
  const double final_loss = std::accumulate(losses.end() - window, losses.end(), 0.0) / window;
  const bool speed_ok = speedup >= 1.2;
  const bool finetune_ok = converged_at > 0;
  return {speed_ok && finetune_ok,
          "G=2 / G=1 throughput " + fmt(speedup) + "x (median of 5, " + fmt(t1) + " s vs " + fmt(t2) +
              " s per 6 frames); finetune: base canvas loss " + fmt(base_loss) + ", " + std::to_string(window) +
              "-step mean " + (finetune_ok ? "within 10% at step " + std::to_string(converged_at)
                                           : "still " + fmt(final_loss) + " after " + std::to_string(lo.steps)) +
              " of " + std::to_string(lo.steps) + " allowed"};
}

// ---------------------------------------------------------------- 11

Outcome criterion11() {
  CanvasMar<float> m = random_desk_model(111);
  const VideoTensor cond = random_video(2, m.config.frame_shape(), 112);
  RolloutConfig rc;
  rc.decode.guidance = kPresetSixSteps.scales;
  const RolloutResult a = rollout(m, cond, 4, rc, 113);
  const RolloutResult b = rollout(m, cond, 4, rc, 113);
  const bool repeatable = a.video == b.video && a.canvases == b.canvases;

  const std::string path = (std::filesystem::temp_directory_path() / "canvasmar_acceptance.cmar").string();
  auto opt = OptState<float>::zeros_like(m.parameters(), AdamConfig{});
  save_checkpoint(path, m, opt);
  const Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  NoGradScope<float> ng;
  const auto h = patchify_video(cond, m.config.patch);
  const auto zt_a = temporal_forward(m, std::span<const TokenGrid>(h));
  const auto zt_b = temporal_forward(loaded.model, std::span<const TokenGrid>(h));
  const auto cv_a = canvas_project(m, canvas_forward(m, zt_a, h.back(), 1).front());
  const auto cv_b = canvas_project(loaded.model, canvas_forward(loaded.model, zt_b, h.back(), 1).front());
  const RolloutResult c = rollout(loaded.model, cond, 4, rc, 113);
  const bool persisted = zt_a.zt.value() == zt_b.zt.value() && cv_a.tokens == cv_b.tokens && c.video == a.video;
  return {repeatable && persisted, std::string("repeated guided rollout ") + (repeatable ? "bit-identical" : "DIFFERS") +
                                       "; reloaded checkpoint forward passes and rollout " +
                                       (persisted ? "bit-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient integrity", criterion1}},     {2, {"KV-cache equivalence", criterion2}},
      {3, {"temporal causality", criterion3}},     {4, {"guidance algebra", criterion4}},
      {5, {"schedule invariants", criterion5}},    {6, {"canvas as conditional mean", criterion6}},
      {7, {"canvas beats uniform mask", criterion7}}, {8, {"Frechet proxy correctness", criterion8}},
      {9, {"protocol structure", criterion9}},     {10, {"next-group speed", criterion10}},
      {11, {"determinism and persistence", criterion11}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, c] : criteria) selected.push_back(id);

  int failed = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " (" << it->second.first << "): " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
