#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "canvasmar/model/canvas_mar.hpp"

namespace canvasmar {

/// Reveal order for one frame: positions order[s_{k-1} .. s_k) form set k.
/// Positions are 0-based.
struct MaskPlan {
  std::vector<Index> order;
  std::vector<Index> sizes;

  int steps() const { return static_cast<int>(sizes.size()); }
  /// s_0 = 0, ..., s_K = n.
  std::vector<Index> offsets() const;
  std::span<const Index> set(int k) const;
};

/// Sizes n_1..n_K from m(k) = ceil(n cos(pi k / 2K)); empty buckets take one
/// token from the current largest bucket.
std::vector<Index> cosine_set_sizes(Index n, Index steps);
/// Masked count remaining after each step: m(0) = n, ..., m(K) = 0.
std::vector<Index> masked_count_curve(std::span<const Index> sizes);
/// Uniform permutation of 0..n-1 (Fisher-Yates).
std::vector<Index> sample_permutation(Index n, RngStream& rng);
MaskPlan make_mask_plan(Index n, Index steps, RngStream& rng);

struct GuidanceScales {
  double w_s = 1.0;
  double w_t = 1.0;
};

struct GuidancePreset {
  int steps;
  GuidanceScales scales;
};
inline constexpr GuidancePreset kPresetSixSteps{6, {2.5, 1.1}};
inline constexpr GuidancePreset kPresetTwelveSteps{12, {2.25, 1.0}};

enum class AugmentMode { train, inference };

struct AugmentConfig {
  double r = 0.4;
  double r_prime = 0.4;
  AugmentMode mode = AugmentMode::inference;

  /// Inference requires r, r' in [0.3, 0.6]; train requires [0, 0.8].
  void validate() const;
  /// r, r' ~ U(0, 0.8).
  static AugmentConfig draw_train(RngStream& rng);
};

/// x (1 - r) + eps r with eps ~ N(0, I).
template <typename Scalar>
Matrix<Scalar> augment(const Matrix<Scalar>& x, double r, RngStream& rng);
/// Differentiable in x.
template <typename Scalar>
Tensor<Scalar> augment(const Tensor<Scalar>& x, double r, RngStream& rng);

/// v_u + w_t (v_t - v_u) + w_s (v_st - v_t), evaluated as
/// (1 - w_t) v_u + (w_t - w_s) v_t + w_s v_st so that the reductions at
/// (1,1), (0,1) and (0,0) are exact.
template <typename Scalar>
Matrix<Scalar> cfg_velocity(const Matrix<Scalar>& v_uncond, const Matrix<Scalar>& v_t, const Matrix<Scalar>& v_st,
                            const GuidanceScales& w);

struct DecodeOptions {
  int steps = 6;
  /// nullopt evaluates the fully conditional branch only.
  std::optional<GuidanceScales> guidance;
  /// 0 uses the model's flow step count.
  int flow_steps = 0;
};

/// Substream tags below the (seed, frame index) key.
enum StreamTag : std::uint64_t {
  kStreamPermutation = 1,
  kStreamFlowNoise = 2,
  kStreamAugmentPrev = 3,
  kStreamAugmentCanvas = 4,
};

/// One frame to decode.
template <typename Scalar>
struct FrameJob {
  Tensor<Scalar> zt;      // n x dim
  Tensor<Scalar> canvas;  // augmented canvas embedding; undefined selects the mask fallback
  std::uint64_t seed = 0;
  int frame_index = 0;
};

/// Decodes the jobs jointly; consecutive runs of `group` jobs share group
/// attention. Each job uses its own permutation and per-token noise streams
/// keyed by (seed, frame_index, token).
template <typename Scalar>
std::vector<TokenGrid> generate_frames(const CanvasMar<Scalar>& model, std::span<const FrameJob<Scalar>> jobs,
                                       int group, const DecodeOptions& options);

template <typename Scalar>
TokenGrid generate_frame(const CanvasMar<Scalar>& model, const TemporalEmbedding<Scalar>& zt,
                         const CanvasEmbedding<Scalar>* zs, const DecodeOptions& options, std::uint64_t seed);

struct RolloutConfig {
  DecodeOptions decode;
  AugmentConfig augment;
  int group = 1;
};

struct RolloutResult {
  VideoTensor video;     // conditioning frames followed by generated frames
  VideoTensor canvases;  // projected canvas of each generated frame, clamped to [0, 1]
};

/// Generates num_new frames after `cond`. Frames are produced G at a time and
/// fed back as history; once history exceeds max_frames - 1 the temporal pass
/// runs over the most recent max_frames - 1 frames.
template <typename Scalar>
RolloutResult rollout(const CanvasMar<Scalar>& model, const VideoTensor& cond, int num_new,
                      const RolloutConfig& config, std::uint64_t seed);

/// Independent rollouts decoded together, one seed per video.
template <typename Scalar>
std::vector<RolloutResult> rollout_batch(const CanvasMar<Scalar>& model, std::span<const VideoTensor> conds,
                                         int num_new, const RolloutConfig& config,
                                         std::span<const std::uint64_t> seeds);

}  // namespace canvasmar
