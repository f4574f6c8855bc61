#pragma once

#include <stdexcept>
#include <string>

#include "canvasmar/model/canvas_mar.hpp"
#include "canvasmar/numerics/rng.hpp"

namespace canvasmar::testing {

/// 16x16 frames in 4x4 patches: 16 tokens of width 16, d = 32.
inline ModelConfig small_config() {
  ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.patch = 4;
  c.dim = 32;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.temporal_layers = 2;
  c.canvas_layers = 1;
  c.spatial_layers = 2;
  c.spatial_encoder_depth = 1;
  c.flow_dim = 32;
  c.flow_layers = 2;
  c.flow_steps = 4;
  c.max_frames = 8;
  return c;
}

template <typename Scalar>
Tensor<Scalar> param(const CanvasMar<Scalar>& model, const std::string& name) {
  for (auto& [n, t] : model.parameters())
    if (n == name) return t;
  throw std::invalid_argument("no parameter " + name);
}

/// Overwrites every parameter with small random values so zero-initialized
/// layers do not hide signal paths.
template <typename Scalar>
void randomize(CanvasMar<Scalar>& model, std::uint64_t seed, double scale = 0.2) {
  RngStream rng(seed);
  for (auto& [n, t] : model.parameters()) t.mutable_value() = gaussian<Scalar>(rng, t.rows(), t.cols()) * Scalar(scale);
}

inline VideoTensor random_video(int frames, FrameShape shape, std::uint64_t seed) {
  VideoTensor v(frames, shape);
  RngStream rng(seed);
  for (auto& x : v.data()) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace canvasmar::testing
