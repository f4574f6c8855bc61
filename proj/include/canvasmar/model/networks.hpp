#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "canvasmar/model/config.hpp"
#include "canvasmar/nn/layers.hpp"

namespace canvasmar {

/// Hybrid-masked transformer over frame tokens. Output rows of frame f
/// summarize frames <= f and serve as the temporal embedding of frame f + 1.
template <typename Scalar>
class TemporalVit {
 public:
  TemporalVit() = default;
  TemporalVit(const ModelConfig& config, RngStream& rng);

  /// tokens: videos*num_frames*n x token_dim; each video starts at frame 0.
  Tensor<Scalar> forward(const Matrix<Scalar>& tokens, int num_frames, int videos = 1) const;
  /// Appends frames first_frame .. first_frame+num_frames-1 to the cache and
  /// returns their output rows. Inference only.
  Tensor<Scalar> forward_cached(const Matrix<Scalar>& tokens, int first_frame, int num_frames,
                                KVCache<Scalar>& cache) const;
  /// Learnable vector plus sinusoidal position code: the dropped-temporal
  /// condition, n x dim.
  Tensor<Scalar> unconditional() const;

  int layers() const { return static_cast<int>(blocks_.size()); }
  void collect(ParamList<Scalar>& out) const;

 private:
  Tensor<Scalar> embed(const Matrix<Scalar>& tokens, int first_frame, int num_frames, int videos) const;

  Index tokens_ = 0;
  int max_frames_ = 0;
  Linear<Scalar> in_proj_;
  Tensor<Scalar> position_;
  Tensor<Scalar> frame_position_;
  Tensor<Scalar> uncond_;
  Matrix<Scalar> uncond_code_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> norm_;
};

/// Deterministic next-frame predictor: shared trunk, one two-layer MLP head
/// per group offset, and a linear projection back to token space.
template <typename Scalar>
class CanvasVit {
 public:
  CanvasVit() = default;
  CanvasVit(const ModelConfig& config, RngStream& rng);

  /// zt and prev_tokens hold B frames stacked along rows.
  Tensor<Scalar> trunk(const Tensor<Scalar>& zt, const Matrix<Scalar>& prev_tokens) const;
  Tensor<Scalar> head(int offset, const Tensor<Scalar>& trunk_out) const;
  Tensor<Scalar> project(const Tensor<Scalar>& zs) const { return projection_(zs); }

  int group_size() const { return static_cast<int>(heads_.size()); }
  /// Adds heads up to `group_size`, each initialized as a copy of head 0.
  void grow_heads(int group_size);
  void collect(ParamList<Scalar>& out) const;

 private:
  Index tokens_ = 0;
  Linear<Scalar> prev_proj_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> norm_;
  std::vector<Mlp<Scalar>> heads_;
  Linear<Scalar> projection_;
};

/// Attention across the frames of one decoding group at each sequence
/// position. The output projection starts at zero so that adding the layer
/// to a trained next-frame model leaves its outputs unchanged.
template <typename Scalar>
struct GroupAttention {
  LayerNorm<Scalar> norm;
  Linear<Scalar> to_q, to_k, to_v, to_out;
  int heads = 1;

  GroupAttention() = default;
  GroupAttention(Index dim, int heads, RngStream& rng, const std::string& name);

  /// x holds items * seq rows; consecutive runs of `group` items form a group.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, int group, Index seq) const;
  void collect(ParamList<Scalar>& out) const;
};

/// A batch of frames for the spatial MAR, stacked along rows (n per item).
template <typename Scalar>
struct SpatialBatch {
  int items = 0;
  Matrix<Scalar> tokens;                // items*n x token_dim; values at unknown positions are ignored
  std::vector<std::uint8_t> known;      // items*n
  Tensor<Scalar> zt;                    // items*n x dim
  Tensor<Scalar> canvas;                // items*n x dim; may be undefined when no item uses it
  std::vector<std::uint8_t> canvas_on;  // per item; off = uniform learnable mask embedding
  int group = 1;                        // items of one decoding group are consecutive
};

/// Masked autoregressive transformer over [temporal context ; frame tokens].
/// Clean tokens pass through the encoder; the decoder sees every position,
/// with masked positions embedded from the canvas (or the mask vector) plus
/// the position code, and routes them through a separate MLP.
template <typename Scalar>
class SpatialMar {
 public:
  SpatialMar() = default;
  SpatialMar(const ModelConfig& config, RngStream& rng);

  /// Embeddings z_j of every masked position, item-major, ascending position.
  Tensor<Scalar> forward(const SpatialBatch<Scalar>& batch) const;

  const Tensor<Scalar>& mask_token() const { return mask_token_; }
  /// Creates the group attention layers on first use with group_size > 1.
  void set_group_size(int group_size, RngStream& rng);
  int group_size() const { return group_size_; }
  void collect(ParamList<Scalar>& out) const;

 private:
  bool group_layer_after(std::size_t block) const;

  Index tokens_ = 0;
  int heads_ = 1;
  int group_size_ = 1;
  Index dim_ = 0;
  int encoder_depth_ = 0;
  Linear<Scalar> in_proj_;
  Tensor<Scalar> position_;
  Tensor<Scalar> context_position_;
  Tensor<Scalar> mask_token_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  std::vector<GroupAttention<Scalar>> group_layers_;
  LayerNorm<Scalar> norm_;
};

/// Per-token velocity field v(x_t, t | z) trained by flow matching.
template <typename Scalar>
class FlowHead {
 public:
  static constexpr int kTimeFeatures = 16;

  FlowHead() = default;
  FlowHead(const ModelConfig& config, RngStream& rng);

  /// Rows of x_t, t and z are aligned; every t must lie in [0, 1].
  Tensor<Scalar> velocity(const Tensor<Scalar>& x_t, const std::vector<Scalar>& t, const Tensor<Scalar>& z) const;

  void collect(ParamList<Scalar>& out) const;

 private:
  Linear<Scalar> in_x_, in_z_, in_t_;
  std::vector<Linear<Scalar>> hidden_;
  Linear<Scalar> out_;
};

}  // namespace canvasmar
