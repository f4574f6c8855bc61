#include "canvasmar/generation/generation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace canvasmar {

std::vector<Index> MaskPlan::offsets() const {
  std::vector<Index> s(sizes.size() + 1, 0);
  for (std::size_t k = 0; k < sizes.size(); ++k) s[k + 1] = s[k] + sizes[k];
  return s;
}

std::span<const Index> MaskPlan::set(int k) const {
  if (k < 0 || k >= steps()) throw std::out_of_range("MaskPlan::set: step out of range");
  Index begin = 0;
  for (int i = 0; i < k; ++i) begin += sizes[static_cast<std::size_t>(i)];
  return std::span<const Index>(order).subspan(static_cast<std::size_t>(begin),
                                               static_cast<std::size_t>(sizes[static_cast<std::size_t>(k)]));
}

std::vector<Index> cosine_set_sizes(Index n, Index steps) {
  if (n < 1 || steps < 1) throw std::invalid_argument("cosine_set_sizes: n and K must be >= 1");
  if (steps > n) {
    throw std::invalid_argument("cosine_set_sizes: K=" + std::to_string(steps) + " exceeds n=" + std::to_string(n));
  }
  // The tolerance keeps exact products such as 16 cos(pi/3) = 8 from rounding up.
  const double tol = 1e-9 * static_cast<double>(n);
  std::vector<Index> m(static_cast<std::size_t>(steps) + 1);
  m[0] = n;
  m[static_cast<std::size_t>(steps)] = 0;
  // cos(k theta) by angle addition, re-anchored every 32 steps; the drift of a
  // few ulp sits far inside the tolerance and the scan stays cheap for large K.
  const double theta = std::numbers::pi / (2.0 * static_cast<double>(steps));
  const double ct = std::cos(theta), st = std::sin(theta);
  double c = 1.0, s = 0.0;
  for (Index k = 1; k < steps; ++k) {
    if (k % 32 == 0) {
      c = std::cos(theta * static_cast<double>(k));
      s = std::sin(theta * static_cast<double>(k));
    } else {
      const double next_c = c * ct - s * st;
      s = s * ct + c * st;
      c = next_c;
    }
    m[static_cast<std::size_t>(k)] = static_cast<Index>(std::ceil(static_cast<double>(n) * c - tol));
  }
  std::vector<Index> sizes(static_cast<std::size_t>(steps));
  for (std::size_t k = 0; k < sizes.size(); ++k) sizes[k] = m[k] - m[k + 1];

  // Repair: every empty bucket takes one token from the largest bucket
  // (lowest index on ties). Since K <= n the donor always holds >= 2, so the
  // net effect of d repairs is to take d tokens off the top: cut every
  // bucket to the level L where the excess first fits in d, then take the
  // remainder from the lowest-index buckets sitting at L.
  const Index empty = std::count(sizes.begin(), sizes.end(), Index{0});
  if (empty == 0) return sizes;
  auto excess = [&](Index level) {
    Index e = 0;
    for (Index v : sizes) e += std::max<Index>(0, v - level);
    return e;
  };
  Index lo = 1, hi = *std::max_element(sizes.begin(), sizes.end());
  while (lo < hi) {
    const Index mid = (lo + hi) / 2;
    if (excess(mid) <= empty) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  Index remainder = empty - excess(lo);
  for (Index& v : sizes) {
    if (v == 0) {
      v = 1;
    } else if (v >= lo) {
      v = lo;
      if (remainder > 0) {
        --v;
        --remainder;
      }
    }
  }
  return sizes;
}

std::vector<Index> masked_count_curve(std::span<const Index> sizes) {
  Index n = 0;
  for (Index s : sizes) n += s;
  std::vector<Index> m(sizes.size() + 1);
  m[0] = n;
  for (std::size_t k = 0; k < sizes.size(); ++k) m[k + 1] = m[k] - sizes[k];
  return m;
}

std::vector<Index> sample_permutation(Index n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("sample_permutation: n must be >= 1");
  std::vector<Index> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

MaskPlan make_mask_plan(Index n, Index steps, RngStream& rng) {
  MaskPlan plan;
  plan.sizes = cosine_set_sizes(n, steps);
  plan.order = sample_permutation(n, rng);
  return plan;
}

void AugmentConfig::validate() const {
  const double lo = mode == AugmentMode::inference ? 0.3 : 0.0;
  const double hi = mode == AugmentMode::inference ? 0.6 : 0.8;
  for (double v : {r, r_prime}) {
    if (!(v >= lo && v <= hi)) {
      throw std::invalid_argument("augmentation coefficient " + std::to_string(v) + " outside [" + std::to_string(lo) +
                                  ", " + std::to_string(hi) + "]");
    }
  }
}

AugmentConfig AugmentConfig::draw_train(RngStream& rng) {
  AugmentConfig c;
  c.mode = AugmentMode::train;
  c.r = rng.uniform(0.0, 0.8);
  c.r_prime = rng.uniform(0.0, 0.8);
  return c;
}

namespace {

void check_ratio(double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("augment: r=" + std::to_string(r) + " outside [0, 1]");
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> augment(const Matrix<Scalar>& x, double r, RngStream& rng) {
  check_ratio(r);
  const Matrix<Scalar> eps = gaussian<Scalar>(rng, x.rows(), x.cols());
  return x * static_cast<Scalar>(1.0 - r) + eps * static_cast<Scalar>(r);
}

template <typename Scalar>
Tensor<Scalar> augment(const Tensor<Scalar>& x, double r, RngStream& rng) {
  check_ratio(r);
  const Matrix<Scalar> eps = gaussian<Scalar>(rng, x.rows(), x.cols()) * static_cast<Scalar>(r);
  return add(scale(x, static_cast<Scalar>(1.0 - r)), constant<Scalar>(eps));
}

template <typename Scalar>
Matrix<Scalar> cfg_velocity(const Matrix<Scalar>& v_uncond, const Matrix<Scalar>& v_t, const Matrix<Scalar>& v_st,
                            const GuidanceScales& w) {
  if (v_uncond.rows() != v_t.rows() || v_uncond.cols() != v_t.cols() || v_t.rows() != v_st.rows() ||
      v_t.cols() != v_st.cols()) {
    throw std::invalid_argument("cfg_velocity: velocity shapes differ");
  }
  const auto a = static_cast<Scalar>(1.0 - w.w_t);
  const auto b = static_cast<Scalar>(w.w_t - w.w_s);
  const auto c = static_cast<Scalar>(w.w_s);
  return (a * v_uncond + b * v_t) + c * v_st;
}

template <typename Scalar>
std::vector<TokenGrid> generate_frames(const CanvasMar<Scalar>& model, std::span<const FrameJob<Scalar>> jobs,
                                       int group, const DecodeOptions& options) {
  NoGradScope<Scalar> no_grad;
  const Index n = model.config.tokens();
  const Index d = model.config.dim;
  const Index d_tok = model.config.token_dim();
  const Index items = static_cast<Index>(jobs.size());
  if (items < 1) throw std::invalid_argument("generate_frames: no jobs");
  if (group < 1 || items % group != 0) throw std::invalid_argument("generate_frames: jobs do not form whole groups");
  if (options.steps < 1 || options.steps > n) {
    throw std::invalid_argument("generate_frames: steps must lie in [1, " + std::to_string(n) + "]");
  }
  const int flow_steps = options.flow_steps > 0 ? options.flow_steps : model.config.flow_steps;
  const std::vector<Index> sizes = cosine_set_sizes(n, options.steps);

  std::vector<std::vector<Index>> orders;
  Matrix<Scalar> zt(items * n, d), canvas = Matrix<Scalar>::Zero(items * n, d);
  std::vector<std::uint8_t> canvas_on(static_cast<std::size_t>(items), 0);
  bool any_canvas = false;
  for (Index b = 0; b < items; ++b) {
    const auto& job = jobs[static_cast<std::size_t>(b)];
    if (job.zt.rows() != n || job.zt.cols() != d) throw std::invalid_argument("generate_frames: zt must be n x dim");
    zt.middleRows(b * n, n) = job.zt.value();
    if (job.canvas.defined()) {
      if (job.canvas.rows() != n || job.canvas.cols() != d) {
        throw std::invalid_argument("generate_frames: canvas must be n x dim");
      }
      canvas.middleRows(b * n, n) = job.canvas.value();
      canvas_on[static_cast<std::size_t>(b)] = 1;
      any_canvas = true;
    }
    RngStream perm = RngStream::derive(job.seed, {static_cast<std::uint64_t>(job.frame_index), kStreamPermutation});
    orders.push_back(sample_permutation(n, perm));
  }

  SpatialBatch<Scalar> cond;
  cond.items = static_cast<int>(items);
  cond.tokens = Matrix<Scalar>::Zero(items * n, d_tok);
  cond.known.assign(static_cast<std::size_t>(items * n), 0);
  cond.zt = constant<Scalar>(std::move(zt));
  if (any_canvas) cond.canvas = constant<Scalar>(std::move(canvas));
  cond.canvas_on = canvas_on;
  cond.group = group;

  Tensor<Scalar> zt_uncond;
  if (options.guidance) zt_uncond = repeat_rows(model.temporal.unconditional(), items);

  Index begin = 0;
  for (Index size : sizes) {
    // Row of each unknown position inside the spatial output.
    std::vector<Index> row_of(static_cast<std::size_t>(items * n), -1);
    Index r = 0;
    for (Index g = 0; g < items * n; ++g)
      if (!cond.known[static_cast<std::size_t>(g)]) row_of[static_cast<std::size_t>(g)] = r++;

    std::vector<Index> rows, targets;
    for (Index b = 0; b < items; ++b) {
      for (Index i = begin; i < begin + size; ++i) {
        const Index g = b * n + orders[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)];
        rows.push_back(row_of[static_cast<std::size_t>(g)]);
        targets.push_back(g);
      }
    }
    const std::span<const Index> rows_span(rows);
    const Tensor<Scalar> z_st = gather_rows(model.spatial.forward(cond), rows_span);
    Tensor<Scalar> z_t, z_u;
    if (options.guidance) {
      SpatialBatch<Scalar> temporal_only = cond;
      std::fill(temporal_only.canvas_on.begin(), temporal_only.canvas_on.end(), std::uint8_t{0});
      z_t = gather_rows(model.spatial.forward(temporal_only), rows_span);
      SpatialBatch<Scalar> neither = temporal_only;
      neither.zt = zt_uncond;
      z_u = gather_rows(model.spatial.forward(neither), rows_span);
    }

    const Index m = static_cast<Index>(targets.size());
    Matrix<Scalar> x(m, d_tok);
    for (Index i = 0; i < m; ++i) {
      const Index g = targets[static_cast<std::size_t>(i)];
      const auto& job = jobs[static_cast<std::size_t>(g / n)];
      RngStream noise = RngStream::derive(
          job.seed, {static_cast<std::uint64_t>(job.frame_index), kStreamFlowNoise, static_cast<std::uint64_t>(g % n)});
      x.row(i) = gaussian<Scalar>(noise, 1, d_tok);
    }
    const Scalar h = Scalar(1) / static_cast<Scalar>(flow_steps);
    for (int s = 0; s < flow_steps; ++s) {
      const Scalar t = static_cast<Scalar>(s) / static_cast<Scalar>(flow_steps);
      const Tensor<Scalar> xt = constant<Scalar>(x);
      Matrix<Scalar> v = flow_velocity(model, xt, t, z_st).value();
      if (options.guidance) {
        v = cfg_velocity<Scalar>(flow_velocity(model, xt, t, z_u).value(), flow_velocity(model, xt, t, z_t).value(), v,
                                 *options.guidance);
      }
      x += h * v;
    }
    for (Index i = 0; i < m; ++i) {
      const Index g = targets[static_cast<std::size_t>(i)];
      cond.tokens.row(g) = x.row(i).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
      cond.known[static_cast<std::size_t>(g)] = 1;
    }
    begin += size;
  }

  std::vector<TokenGrid> out;
  for (Index b = 0; b < items; ++b) {
    out.push_back({cond.tokens.middleRows(b * n, n).template cast<float>(), jobs[static_cast<std::size_t>(b)].frame_index});
  }
  return out;
}

template <typename Scalar>
TokenGrid generate_frame(const CanvasMar<Scalar>& model, const TemporalEmbedding<Scalar>& zt,
                         const CanvasEmbedding<Scalar>* zs, const DecodeOptions& options, std::uint64_t seed) {
  FrameJob<Scalar> job;
  job.zt = zt.zt;
  if (zs != nullptr) job.canvas = zs->zs;
  job.seed = seed;
  job.frame_index = zt.frame_index + (zs != nullptr ? zs->group_offset - 1 : 0);
  return generate_frames(model, std::span<const FrameJob<Scalar>>(&job, 1), 1, options).front();
}

namespace {

struct RolloutState {
  std::vector<TokenGrid> history;
  std::uint64_t seed = 0;
  int produced = 0;
};

}  // namespace

template <typename Scalar>
std::vector<RolloutResult> rollout_batch(const CanvasMar<Scalar>& model, std::span<const VideoTensor> conds,
                                         int num_new, const RolloutConfig& config,
                                         std::span<const std::uint64_t> seeds) {
  NoGradScope<Scalar> no_grad;
  const ModelConfig& mc = model.config;
  const int group = config.group;
  if (conds.empty() || conds.size() != seeds.size()) throw std::invalid_argument("rollout: one seed per video required");
  if (num_new < 0) throw std::invalid_argument("rollout: num_new must be >= 0");
  if (group < 1 || group > model.canvas.group_size() || group > model.spatial.group_size()) {
    throw std::invalid_argument("rollout: group size " + std::to_string(group) + " not supported by the model");
  }
  config.augment.validate();
  const int window = mc.max_frames - 1;
  if (window < 1) throw std::invalid_argument("rollout: max_frames must be >= 2");

  std::vector<RolloutResult> results;
  std::vector<RolloutState> states;
  std::vector<KVCache<Scalar>> caches;
  for (std::size_t b = 0; b < conds.size(); ++b) {
    const VideoTensor& c = conds[b];
    if (c.frames() < 1) throw std::invalid_argument("rollout: at least one conditioning frame required");
    if (!(c.frame_shape() == mc.frame_shape())) {
      throw std::invalid_argument("rollout: conditioning video resolution does not match the model");
    }
    results.push_back({c, VideoTensor(0, c.frame_shape())});
    states.push_back({patchify_video(c, mc.patch), seeds[b], 0});
    caches.emplace_back(model.temporal.layers());
  }

  while (states.front().produced < num_new) {
    std::vector<FrameJob<Scalar>> jobs;
    for (std::size_t b = 0; b < states.size(); ++b) {
      RolloutState& st = states[b];
      const int h = static_cast<int>(st.history.size());
      std::span<const TokenGrid> hist(st.history);
      if (h > window) {
        hist = hist.subspan(static_cast<std::size_t>(h - window));
        caches[b].clear();
      }
      const TemporalEmbedding<Scalar> zt = temporal_forward(model, hist, &caches[b]);
      std::vector<CanvasEmbedding<Scalar>> canvases;
      if (mc.use_canvas) {
        RngStream prev_noise = RngStream::derive(st.seed, {static_cast<std::uint64_t>(zt.frame_index), kStreamAugmentPrev});
        TokenGrid prev_aug{augment<float>(st.history.back().tokens, config.augment.r, prev_noise),
                           st.history.back().frame_index};
        canvases = canvas_forward(model, zt, prev_aug, group);
      }
      for (int g = 0; g < group; ++g) {
        FrameJob<Scalar> job;
        job.zt = zt.zt;
        job.seed = st.seed;
        job.frame_index = zt.frame_index + g;
        if (mc.use_canvas) {
          const auto& zs = canvases[static_cast<std::size_t>(g)];
          RngStream canvas_noise =
              RngStream::derive(st.seed, {static_cast<std::uint64_t>(job.frame_index), kStreamAugmentCanvas});
          job.canvas = constant<Scalar>(augment<Scalar>(zs.zs.value(), config.augment.r_prime, canvas_noise));
          if (st.produced + g < num_new) {
            MatrixF projected = canvas_project(model, zs).tokens.cwiseMax(0.0f).cwiseMin(1.0f);
            results[b].canvases.append_frame(unpatchify(projected, mc.frame_shape(), mc.patch));
          }
        }
        jobs.push_back(std::move(job));
      }
    }
    const std::vector<TokenGrid> frames =
        generate_frames(model, std::span<const FrameJob<Scalar>>(jobs), group, config.decode);
    for (std::size_t b = 0; b < states.size(); ++b) {
      RolloutState& st = states[b];
      for (int g = 0; g < group; ++g) {
        const TokenGrid& f = frames[b * static_cast<std::size_t>(group) + static_cast<std::size_t>(g)];
        st.history.push_back(f);
        if (st.produced < num_new) {
          results[b].video.append_frame(unpatchify(f.tokens, mc.frame_shape(), mc.patch));
          ++st.produced;
        }
      }
    }
  }
  return results;
}

template <typename Scalar>
RolloutResult rollout(const CanvasMar<Scalar>& model, const VideoTensor& cond, int num_new,
                      const RolloutConfig& config, std::uint64_t seed) {
  return rollout_batch(model, std::span<const VideoTensor>(&cond, 1), num_new, config,
                       std::span<const std::uint64_t>(&seed, 1))
      .front();
}

#define CANVASMAR_INSTANTIATE_GENERATION(S)                                                                      \
  template Matrix<S> augment<S>(const Matrix<S>&, double, RngStream&);                                         \
  template Tensor<S> augment<S>(const Tensor<S>&, double, RngStream&);                                         \
  template Matrix<S> cfg_velocity<S>(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&, const GuidanceScales&); \
  template std::vector<TokenGrid> generate_frames<S>(const CanvasMar<S>&, std::span<const FrameJob<S>>, int,   \
                                                     const DecodeOptions&);                                     \
  template TokenGrid generate_frame<S>(const CanvasMar<S>&, const TemporalEmbedding<S>&, const CanvasEmbedding<S>*, \
                                       const DecodeOptions&, std::uint64_t);                                    \
  template std::vector<RolloutResult> rollout_batch<S>(const CanvasMar<S>&, std::span<const VideoTensor>, int, \
                                                       const RolloutConfig&, std::span<const std::uint64_t>);  \
  template RolloutResult rollout<S>(const CanvasMar<S>&, const VideoTensor&, int, const RolloutConfig&, std::uint64_t);

CANVASMAR_INSTANTIATE_GENERATION(float)
CANVASMAR_INSTANTIATE_GENERATION(double)

}  // namespace canvasmar
