#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "canvasmar/model/networks.hpp"
#include "canvasmar/nn/tokens.hpp"

namespace canvasmar {

/// Summary of frames [0, frame_index) for predicting frame frame_index.
template <typename Scalar>
struct TemporalEmbedding {
  Tensor<Scalar> zt;  // n x dim
  int frame_index = 0;
};

/// Coarse guess of frame (zt.frame_index + group_offset - 1).
template <typename Scalar>
struct CanvasEmbedding {
  Tensor<Scalar> zs;  // n x dim
  int group_offset = 1;
};

template <typename Scalar>
struct CanvasMar {
  ModelConfig config;
  std::uint64_t seed = 0;
  TemporalVit<Scalar> temporal;
  CanvasVit<Scalar> canvas;
  SpatialMar<Scalar> spatial;
  FlowHead<Scalar> flow;

  CanvasMar() = default;
  CanvasMar(const ModelConfig& config, std::uint64_t seed);

  /// All trainable tensors, in a fixed order with unique names.
  ParamList<Scalar> parameters() const;
  /// Adds canvas heads (copies of head 0) and spatial group attention.
  void set_group_size(int group_size);
  /// Same architecture with parameters converted to another scalar type.
  template <typename To>
  CanvasMar<To> cast() const {
    CanvasMar<To> out(config, seed);
    ParamList<To> dst = out.parameters();
    copy_parameters(parameters(), dst);
    return out;
  }
};

/// Converts float tokens to the model scalar.
template <typename Scalar>
Matrix<Scalar> to_scalar(const MatrixF& m) {
  return m.template cast<Scalar>();
}

/// Temporal embedding for the frame after history.back(). History positions
/// are taken as frame indices 0..size-1. With a cache, the cache must hold a
/// prefix of the history; the remaining frames are appended to it. A
/// default-constructed cache is sized on first use.
template <typename Scalar>
TemporalEmbedding<Scalar> temporal_forward(const CanvasMar<Scalar>& model, std::span<const TokenGrid> history,
                                           KVCache<Scalar>* cache = nullptr);

/// One canvas embedding per group offset 1..G from a shared trunk pass.
template <typename Scalar>
std::vector<CanvasEmbedding<Scalar>> canvas_forward(const CanvasMar<Scalar>& model,
                                                    const TemporalEmbedding<Scalar>& zt, const TokenGrid& prev_frame,
                                                    int group_size);

template <typename Scalar>
TokenGrid canvas_project(const CanvasMar<Scalar>& model, const CanvasEmbedding<Scalar>& zs);

/// Embeddings of the masked positions of one frame, ascending by position.
/// `canvas == nullptr` selects the uniform mask embedding.
template <typename Scalar>
Tensor<Scalar> spatial_forward(const CanvasMar<Scalar>& model, const TokenGrid& frame, std::span<const Index> known,
                               std::span<const Index> masked, const CanvasEmbedding<Scalar>* canvas,
                               const TemporalEmbedding<Scalar>& zt);

template <typename Scalar>
Tensor<Scalar> flow_velocity(const CanvasMar<Scalar>& model, const Tensor<Scalar>& x_t, Scalar t,
                             const Tensor<Scalar>& z);

/// Euler integration from x(0) = x0 to t = 1 with step 1/steps.
template <typename Scalar>
Matrix<Scalar> flow_integrate(const CanvasMar<Scalar>& model, const Tensor<Scalar>& z, Matrix<Scalar> x0, int steps);

/// flow_integrate from a standard normal start drawn from rng.
template <typename Scalar>
Matrix<Scalar> flow_sample(const CanvasMar<Scalar>& model, const Tensor<Scalar>& z, int steps, RngStream& rng);

}  // namespace canvasmar
