#pragma once

#include <string>
#include <vector>

#include "canvasmar/nn/attention.hpp"
#include "canvasmar/numerics/ops.hpp"
#include "canvasmar/numerics/optim.hpp"
#include "canvasmar/numerics/rng.hpp"

namespace canvasmar {

/// Standard interleaved encoding: column 2i = sin(pos * w_i), column 2i+1 =
/// cos(pos * w_i), w_i = 10000^(-2i/d).
template <typename Scalar>
Matrix<Scalar> sinusoidal_pe(Index length, Index dim);

template <typename Scalar>
Matrix<Scalar> xavier_uniform(RngStream& rng, Index fan_in, Index fan_out);

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // in x out
  Tensor<Scalar> bias;    // 1 x out

  Linear() = default;
  Linear(Index in, Index out, RngStream& rng, const std::string& name);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return linear(x, weight, bias); }
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
  void collect(ParamList<Scalar>& out) const;
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;

  LayerNorm() = default;
  LayerNorm(Index dim, const std::string& name);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layer_norm(x, gain, bias); }
  void collect(ParamList<Scalar>& out) const;
};

/// Linear -> GELU -> Linear.
template <typename Scalar>
struct Mlp {
  Linear<Scalar> fc1;
  Linear<Scalar> fc2;

  Mlp() = default;
  Mlp(Index in, Index hidden, Index out, RngStream& rng, const std::string& name);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return fc2(gelu(fc1(x))); }
  void collect(ParamList<Scalar>& out) const;
};

/// Rows of a block input split between the two MLP paths of a dual block.
struct RowRoute {
  std::vector<Index> clean;
  std::vector<Index> masked;
};

/// Pre-norm transformer block: x += Attn(LN(x)); x += MLP(LN(x)). A dual block
/// carries a second MLP used for rows routed as masked/canvas.
template <typename Scalar>
struct TransformerBlock {
  LayerNorm<Scalar> norm1, norm2;
  Linear<Scalar> to_q, to_k, to_v, to_out;
  Mlp<Scalar> mlp;
  Mlp<Scalar> mlp_masked;
  bool dual = false;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(Index dim, int heads, int mlp_ratio, bool dual, RngStream& rng, const std::string& name);

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const AttentionMask& mask, const RowRoute* route = nullptr) const;
  /// Inference-only incremental pass; appends this block's keys/values.
  Tensor<Scalar> forward_cached(const Tensor<Scalar>& x, KVCacheLayer<Scalar>& cache,
                                std::span<const int> frame_ids) const;
  void collect(ParamList<Scalar>& out) const;

 private:
  Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const RowRoute* route) const;
};

/// Copies values by name from `src` into `dst` (scalar conversion allowed).
/// Every destination name must exist in the source with the same shape.
template <typename From, typename To>
void copy_parameters(const ParamList<From>& src, ParamList<To>& dst) {
  for (auto& [name, t] : dst) {
    const Tensor<From>* found = nullptr;
    for (const auto& [sname, st] : src)
      if (sname == name) found = &st;
    if (found == nullptr) throw std::invalid_argument("copy_parameters: missing '" + name + "'");
    if (found->rows() != t.rows() || found->cols() != t.cols()) {
      throw std::invalid_argument("copy_parameters: shape mismatch for '" + name + "'");
    }
    t.mutable_value() = found->value().template cast<To>();
  }
}

}  // namespace canvasmar
