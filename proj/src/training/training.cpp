#include "canvasmar/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace canvasmar {

DropoutFlags DropoutFlags::draw(RngStream& rng, double p) {
  const double u = rng.uniform();
  DropoutFlags f;
  if (u < p) {
    f.drop_spatial = true;
  } else if (u < 2 * p) {
    f.drop_temporal = true;
  } else if (u < 3 * p) {
    f.drop_spatial = f.drop_temporal = true;
  }
  return f;
}

template <typename Scalar>
Tensor<Scalar> canvas_loss(const Tensor<Scalar>& prediction, const Matrix<Scalar>& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw std::invalid_argument("canvas_loss: prediction and target shapes differ");
  }
  return scale(sum(square(sub(prediction, constant<Scalar>(target)))), Scalar(1) / static_cast<Scalar>(target.rows()));
}

double canvas_loss(const TokenGrid& prediction, const TokenGrid& target) {
  return canvas_loss<double>(constant<double>(prediction.tokens.cast<double>()), target.tokens.cast<double>()).item();
}

namespace {

template <typename Scalar>
struct FlowDraw {
  Matrix<Scalar> x_t;
  std::vector<Scalar> t;
  Matrix<Scalar> velocity;  // x1 - x0
};

template <typename Scalar>
FlowDraw<Scalar> draw_flow(const Matrix<Scalar>& x1, RngStream& rng) {
  FlowDraw<Scalar> d;
  const Matrix<Scalar> x0 = gaussian<Scalar>(rng, x1.rows(), x1.cols());
  d.t.resize(static_cast<std::size_t>(x1.rows()));
  d.x_t.resize(x1.rows(), x1.cols());
  for (Index r = 0; r < x1.rows(); ++r) {
    const auto t = static_cast<Scalar>(rng.uniform());
    d.t[static_cast<std::size_t>(r)] = t;
    d.x_t.row(r) = (Scalar(1) - t) * x0.row(r) + t * x1.row(r);
  }
  d.velocity = x1 - x0;
  return d;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> flow_matching_loss(const FlowHead<Scalar>& head, const Matrix<Scalar>& x1, const Tensor<Scalar>& z,
                                  RngStream& rng) {
  if (x1.rows() != z.rows() || x1.rows() < 1) throw std::invalid_argument("flow_matching_loss: one z row per token required");
  FlowDraw<Scalar> d = draw_flow(x1, rng);
  const Tensor<Scalar> v = head.velocity(constant<Scalar>(std::move(d.x_t)), d.t, z);
  return canvas_loss(v, d.velocity);
}

std::vector<Index> sample_mask_set(Index n, RngStream& rng, std::optional<double> ratio) {
  if (n < 1) throw std::invalid_argument("sample_mask_set: n must be >= 1");
  const double rho = ratio ? *ratio : rng.uniform(0.5, 1.0);
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("sample_mask_set: ratio outside [0, 1]");
  const auto count = static_cast<Index>(std::llround(rho * static_cast<double>(n)));
  std::vector<Index> perm = sample_permutation(n, rng);
  perm.resize(static_cast<std::size_t>(count));
  std::sort(perm.begin(), perm.end());
  return perm;
}

namespace {

enum PairStream : std::uint64_t {
  kPairFlags = 1,
  kPairAugment = 2,
  kPairPrevNoise = 3,
  kPairCanvasNoise = 4,
  kPairMask = 5,
  kPairFlow = 6,
};

template <typename Scalar>
struct Pair {
  int video = 0;
  int frame = 0;  // first target frame; the temporal embedding summarizes frames < frame
  RngStream rng;
  DropoutFlags flags;
  AugmentConfig aug;
  Tensor<Scalar> zt;
};

template <typename Scalar>
Matrix<Scalar> frame_tokens(const std::vector<Matrix<Scalar>>& tokens, int video, int frame, Index n) {
  return tokens[static_cast<std::size_t>(video)].middleRows(static_cast<Index>(frame) * n, n);
}

/// Losses of every item of `pairs`, evaluated as one batch. Items are ordered
/// pair-major with the group offset minor.
template <typename Scalar>
std::vector<ItemLoss<Scalar>> pair_losses(const CanvasMar<Scalar>& model, std::span<Pair<Scalar>> pairs,
                                          const std::vector<Matrix<Scalar>>& tokens, int group) {
  const ModelConfig& mc = model.config;
  const Index n = mc.tokens();
  const Index d_tok = mc.token_dim();
  const Index P = static_cast<Index>(pairs.size());
  const Index items = P * group;

  std::vector<Tensor<Scalar>> zts;
  for (const auto& p : pairs) zts.push_back(p.zt);
  const Tensor<Scalar> zt_all = concat_rows(std::span<const Tensor<Scalar>>(zts));

  std::vector<Tensor<Scalar>> canvas_item_loss(static_cast<std::size_t>(items));
  Tensor<Scalar> canvas_rows;  // (group * P * n) x dim, offset-major
  if (mc.use_canvas) {
    Matrix<Scalar> prev(P * n, d_tok);
    for (Index p = 0; p < P; ++p) {
      auto& pr = pairs[static_cast<std::size_t>(p)];
      RngStream noise = pr.rng.child({kPairPrevNoise});
      prev.middleRows(p * n, n) = augment<Scalar>(frame_tokens(tokens, pr.video, pr.frame - 1, n), pr.aug.r, noise);
    }
    const Tensor<Scalar> trunk =
        model.canvas.trunk(mc.canvas_grad_to_temporal ? zt_all : detach(zt_all), prev);
    std::vector<Tensor<Scalar>> augmented;
    for (int g = 0; g < group; ++g) {
      const Tensor<Scalar> zs = model.canvas.head(g, trunk);
      const Tensor<Scalar> pred = model.canvas.project(zs);
      Matrix<Scalar> target(P * n, d_tok), noise(P * n, mc.dim);
      std::vector<Scalar> keep(static_cast<std::size_t>(P * n));
      for (Index p = 0; p < P; ++p) {
        auto& pr = pairs[static_cast<std::size_t>(p)];
        target.middleRows(p * n, n) = frame_tokens(tokens, pr.video, pr.frame + g, n);
        RngStream eps = pr.rng.child({kPairCanvasNoise, static_cast<std::uint64_t>(g)});
        noise.middleRows(p * n, n) = gaussian<Scalar>(eps, n, mc.dim) * static_cast<Scalar>(pr.aug.r_prime);
        std::fill_n(keep.begin() + p * n, n, static_cast<Scalar>(1.0 - pr.aug.r_prime));
      }
      const Tensor<Scalar> err = square(sub(pred, constant<Scalar>(std::move(target))));
      for (Index p = 0; p < P; ++p) {
        canvas_item_loss[static_cast<std::size_t>(p * group + g)] =
            scale(sum(slice_rows(err, p * n, n)), Scalar(1) / static_cast<Scalar>(n));
      }
      augmented.push_back(add(scale_rows(zs, keep), constant<Scalar>(std::move(noise))));
    }
    canvas_rows = concat_rows(std::span<const Tensor<Scalar>>(augmented));
  }

  // Spatial batch over items (p, g).
  SpatialBatch<Scalar> batch;
  batch.items = static_cast<int>(items);
  batch.group = group;
  batch.tokens.resize(items * n, d_tok);
  batch.known.assign(static_cast<std::size_t>(items * n), 1);
  batch.canvas_on.assign(static_cast<std::size_t>(items), 0);
  std::vector<Index> zt_rows(static_cast<std::size_t>(items * n)), canvas_index(static_cast<std::size_t>(items * n));
  std::vector<std::vector<Index>> masked(static_cast<std::size_t>(items));
  bool any_uncond = false;
  for (Index p = 0; p < P; ++p) {
    auto& pr = pairs[static_cast<std::size_t>(p)];
    any_uncond = any_uncond || pr.flags.drop_temporal;
    for (int g = 0; g < group; ++g) {
      const Index item = p * group + g;
      batch.tokens.middleRows(item * n, n) = frame_tokens(tokens, pr.video, pr.frame + g, n);
      batch.canvas_on[static_cast<std::size_t>(item)] = mc.use_canvas && !pr.flags.drop_spatial;
      RngStream mask_rng = pr.rng.child({kPairMask, static_cast<std::uint64_t>(g)});
      masked[static_cast<std::size_t>(item)] = sample_mask_set(n, mask_rng);
      for (Index j : masked[static_cast<std::size_t>(item)]) batch.known[static_cast<std::size_t>(item * n + j)] = 0;
      for (Index j = 0; j < n; ++j) {
        zt_rows[static_cast<std::size_t>(item * n + j)] = pr.flags.drop_temporal ? P * n + j : p * n + j;
        canvas_index[static_cast<std::size_t>(item * n + j)] = (static_cast<Index>(g) * P + p) * n + j;
      }
    }
  }
  const Tensor<Scalar> zt_source =
      any_uncond ? concat_rows(std::span<const Tensor<Scalar>>(std::vector<Tensor<Scalar>>{zt_all, model.temporal.unconditional()}))
                 : zt_all;
  batch.zt = gather_rows(zt_source, std::span<const Index>(zt_rows));
  if (mc.use_canvas) batch.canvas = gather_rows(canvas_rows, std::span<const Index>(canvas_index));
  const Tensor<Scalar> z = model.spatial.forward(batch);

  // Flow matching at masked positions, per-item draws.
  const Index M = z.rows();
  Matrix<Scalar> x_t(M, d_tok), velocity(M, d_tok);
  std::vector<Scalar> t;
  t.reserve(static_cast<std::size_t>(M));
  std::vector<Index> offsets(static_cast<std::size_t>(items) + 1, 0);
  for (Index item = 0; item < items; ++item) {
    const auto& pr = pairs[static_cast<std::size_t>(item / group)];
    const auto& mset = masked[static_cast<std::size_t>(item)];
    const Index m = static_cast<Index>(mset.size());
    Matrix<Scalar> x1(m, d_tok);
    for (Index r = 0; r < m; ++r) x1.row(r) = batch.tokens.row(item * n + mset[static_cast<std::size_t>(r)]);
    RngStream flow_rng = pr.rng.child({kPairFlow, static_cast<std::uint64_t>(item % group)});
    FlowDraw<Scalar> d = draw_flow(x1, flow_rng);
    const Index o = offsets[static_cast<std::size_t>(item)];
    x_t.middleRows(o, m) = d.x_t;
    velocity.middleRows(o, m) = d.velocity;
    t.insert(t.end(), d.t.begin(), d.t.end());
    offsets[static_cast<std::size_t>(item) + 1] = o + m;
  }
  const Tensor<Scalar> v = model.flow.velocity(constant<Scalar>(std::move(x_t)), t, z);
  const Tensor<Scalar> err = square(sub(v, constant<Scalar>(std::move(velocity))));

  std::vector<ItemLoss<Scalar>> out;
  for (Index item = 0; item < items; ++item) {
    const auto& pr = pairs[static_cast<std::size_t>(item / group)];
    const Index o = offsets[static_cast<std::size_t>(item)];
    const Index m = offsets[static_cast<std::size_t>(item) + 1] - o;
    ItemLoss<Scalar> l;
    l.video = pr.video;
    l.frame = pr.frame + static_cast<int>(item % group);
    l.flow = scale(sum(slice_rows(err, o, m)), Scalar(1) / static_cast<Scalar>(m));
    l.canvas = mc.use_canvas ? canvas_item_loss[static_cast<std::size_t>(item)]
                             : constant<Scalar>(Matrix<Scalar>::Zero(1, 1));
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

template <typename Scalar>
BatchLoss<Scalar> compute_losses(const CanvasMar<Scalar>& model, const TrainBatch& batch, const TrainConfig& config,
                                 std::uint64_t step_seed, LossMode mode) {
  const ModelConfig& mc = model.config;
  const Index n = mc.tokens();
  const int B = static_cast<int>(batch.videos.size());
  const int N = batch.frames();
  const int G = config.group;
  if (B < 1 || batch.stream_ids.size() != batch.videos.size()) {
    throw std::invalid_argument("compute_losses: one stream id per clip required");
  }
  if (G < 1 || G > model.canvas.group_size() || G > model.spatial.group_size()) {
    throw std::invalid_argument("compute_losses: group size " + std::to_string(G) + " not supported by the model");
  }
  if (N < G + 1) throw std::invalid_argument("compute_losses: clips need at least group + 1 frames");
  if (N > mc.max_frames) throw std::invalid_argument("compute_losses: clip longer than max_frames");

  std::vector<Matrix<Scalar>> tokens;
  Matrix<Scalar> stacked(static_cast<Index>(B) * N * n, mc.token_dim());
  for (int b = 0; b < B; ++b) {
    const VideoTensor& v = batch.videos[static_cast<std::size_t>(b)];
    if (v.frames() != N || !(v.frame_shape() == mc.frame_shape())) {
      throw std::invalid_argument("compute_losses: clip " + std::to_string(b) + " has the wrong shape");
    }
    Matrix<Scalar> t(static_cast<Index>(N) * n, mc.token_dim());
    const auto grids = patchify_video(v, mc.patch);
    for (int f = 0; f < N; ++f) t.middleRows(f * n, n) = to_scalar<Scalar>(grids[static_cast<std::size_t>(f)].tokens);
    stacked.middleRows(static_cast<Index>(b) * N * n, static_cast<Index>(N) * n) = t;
    tokens.push_back(std::move(t));
  }

  std::vector<Pair<Scalar>> pairs;
  for (int b = 0; b < B; ++b) {
    for (int i = 1; i + G - 1 < N; ++i) {
      Pair<Scalar> p;
      p.video = b;
      p.frame = i;
      p.rng = RngStream::derive(step_seed, {batch.stream_ids[static_cast<std::size_t>(b)], static_cast<std::uint64_t>(i)});
      RngStream flag_rng = p.rng.child({kPairFlags});
      p.flags = DropoutFlags::draw(flag_rng, config.condition_dropout);
      RngStream aug_rng = p.rng.child({kPairAugment});
      p.aug = AugmentConfig::draw_train(aug_rng);
      pairs.push_back(std::move(p));
    }
  }

  std::vector<ItemLoss<Scalar>> items;
  if (mode == LossMode::parallel) {
    const Tensor<Scalar> out = model.temporal.forward(stacked, N, B);
    for (auto& p : pairs) p.zt = slice_rows(out, (static_cast<Index>(p.video) * N + p.frame - 1) * n, n);
    items = pair_losses(model, std::span<Pair<Scalar>>(pairs), tokens, G);
  } else {
    for (auto& p : pairs) {
      const Matrix<Scalar> history = tokens[static_cast<std::size_t>(p.video)].topRows(static_cast<Index>(p.frame) * n);
      p.zt = slice_rows(model.temporal.forward(history, p.frame), static_cast<Index>(p.frame - 1) * n, n);
      auto part = pair_losses(model, std::span<Pair<Scalar>>(&p, 1), tokens, G);
      for (auto& l : part) items.push_back(std::move(l));
    }
  }

  BatchLoss<Scalar> loss;
  std::vector<Tensor<Scalar>> c, f;
  for (const auto& l : items) {
    c.push_back(l.canvas);
    f.push_back(l.flow);
  }
  loss.canvas = mean(concat_rows(std::span<const Tensor<Scalar>>(c)));
  loss.flow = mean(concat_rows(std::span<const Tensor<Scalar>>(f)));
  loss.total = add(scale(loss.canvas, static_cast<Scalar>(config.canvas_weight)),
                   scale(loss.flow, static_cast<Scalar>(config.flow_weight)));
  loss.items = std::move(items);
  return loss;
}

StepMetrics train_step(CanvasMar<float>& model, OptState<float>& opt, const TrainBatch& batch,
                       const TrainConfig& config, std::uint64_t seed) {
  StepMetrics metrics;
  metrics.step = opt.step + 1;
  const std::uint64_t step_seed = RngStream::derive(seed, {static_cast<std::uint64_t>(metrics.step)}).next_u64();
  ParamList<float> params = model.parameters();

  GradTape<float> tape;
  BatchLoss<float> loss;
  {
    TapeScope<float> scope(tape);
    loss = compute_losses(model, batch, config, step_seed, LossMode::parallel);
  }
  metrics.canvas_loss = loss.canvas.item();
  metrics.flow_loss = loss.flow.item();
  metrics.total_loss = loss.total.item();
  if (!std::isfinite(metrics.total_loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << metrics.step << " (canvas " << metrics.canvas_loss << ", flow "
        << metrics.flow_loss << ")";
    throw NumericError(msg.str());
  }
  const Gradients<float> grads = tape.backward(loss.total);
  std::vector<MatrixF> g;
  double sq = 0;
  for (const auto& [name, p] : params) {
    g.push_back(grads.of(p));
    sq += g.back().template cast<double>().squaredNorm();
  }
  metrics.grad_norm = std::sqrt(sq);
  if (config.grad_clip > 0 && metrics.grad_norm > config.grad_clip) {
    const auto factor = static_cast<float>(config.grad_clip / metrics.grad_norm);
    for (auto& m : g) m *= factor;
  }
  metrics.learning_rate = warmup_learning_rate(config.adam, metrics.step);
  adam_step(params, g, opt, metrics.learning_rate);
  return metrics;
}

TrainBatch sample_batch(std::span<const VideoTensor> dataset, int batch_size, int frames, std::uint64_t seed,
                        long step) {
  if (dataset.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  RngStream rng = RngStream::derive(seed, {0x62617463ULL, static_cast<std::uint64_t>(step)});
  TrainBatch batch;
  for (int b = 0; b < batch_size; ++b) {
    const VideoTensor& clip = dataset[rng.below(dataset.size())];
    if (clip.frames() < frames) throw std::invalid_argument("sample_batch: clip shorter than requested frames");
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(clip.frames() - frames + 1)));
    batch.videos.push_back(clip.slice(start, frames));
    batch.stream_ids.push_back(rng.next_u64());
  }
  return batch;
}

template Tensor<float> canvas_loss<float>(const Tensor<float>&, const MatrixF&);
template Tensor<double> canvas_loss<double>(const Tensor<double>&, const MatrixD&);
template Tensor<float> flow_matching_loss<float>(const FlowHead<float>&, const MatrixF&, const Tensor<float>&, RngStream&);
template Tensor<double> flow_matching_loss<double>(const FlowHead<double>&, const MatrixD&, const Tensor<double>&,
                                                   RngStream&);
template BatchLoss<float> compute_losses<float>(const CanvasMar<float>&, const TrainBatch&, const TrainConfig&,
                                                std::uint64_t, LossMode);
template BatchLoss<double> compute_losses<double>(const CanvasMar<double>&, const TrainBatch&, const TrainConfig&,
                                                  std::uint64_t, LossMode);

}  // namespace canvasmar
