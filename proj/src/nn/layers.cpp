#include "canvasmar/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace canvasmar {

template <typename Scalar>
Matrix<Scalar> sinusoidal_pe(Index length, Index dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_pe: dimension must be even");
  Matrix<Scalar> pe(length, dim);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe(pos, 2 * i) = static_cast<Scalar>(std::sin(static_cast<double>(pos) * freq));
      pe(pos, 2 * i + 1) = static_cast<Scalar>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return pe;
}

template <typename Scalar>
Matrix<Scalar> xavier_uniform(RngStream& rng, Index fan_in, Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<Scalar> w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(rng.uniform(-limit, limit));
  return w;
}

template <typename Scalar>
Linear<Scalar>::Linear(Index in, Index out, RngStream& rng, const std::string& name)
    : weight(Tensor<Scalar>::parameter(xavier_uniform<Scalar>(rng, in, out), name + ".weight")),
      bias(Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, out), name + ".bias")) {}

template <typename Scalar>
void Linear<Scalar>::collect(ParamList<Scalar>& out) const {
  out.emplace_back(weight.name(), weight);
  out.emplace_back(bias.name(), bias);
}

template <typename Scalar>
LayerNorm<Scalar>::LayerNorm(Index dim, const std::string& name)
    : gain(Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(1, dim), name + ".gain")),
      bias(Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, dim), name + ".bias")) {}

template <typename Scalar>
void LayerNorm<Scalar>::collect(ParamList<Scalar>& out) const {
  out.emplace_back(gain.name(), gain);
  out.emplace_back(bias.name(), bias);
}

template <typename Scalar>
Mlp<Scalar>::Mlp(Index in, Index hidden, Index out, RngStream& rng, const std::string& name)
    : fc1(in, hidden, rng, name + ".fc1"), fc2(hidden, out, rng, name + ".fc2") {}

template <typename Scalar>
void Mlp<Scalar>::collect(ParamList<Scalar>& out) const {
  fc1.collect(out);
  fc2.collect(out);
}

template <typename Scalar>
TransformerBlock<Scalar>::TransformerBlock(Index dim, int heads_, int mlp_ratio, bool dual_, RngStream& rng,
                                           const std::string& name)
    : norm1(dim, name + ".norm1"),
      norm2(dim, name + ".norm2"),
      to_q(dim, dim, rng, name + ".q"),
      to_k(dim, dim, rng, name + ".k"),
      to_v(dim, dim, rng, name + ".v"),
      to_out(dim, dim, rng, name + ".out"),
      mlp(dim, dim * mlp_ratio, dim, rng, name + ".mlp"),
      dual(dual_),
      heads(heads_) {
  if (dim % heads_ != 0) throw std::invalid_argument("TransformerBlock: dim not divisible by heads");
  if (dual) mlp_masked = Mlp<Scalar>(dim, dim * mlp_ratio, dim, rng, name + ".mlp_masked");
}

template <typename Scalar>
Tensor<Scalar> TransformerBlock<Scalar>::feed_forward(const Tensor<Scalar>& x, const RowRoute* route) const {
  const Tensor<Scalar> h = norm2(x);
  if (!dual || route == nullptr || route->masked.empty()) return mlp(h);
  if (route->clean.empty()) return mlp_masked(h);
  const Tensor<Scalar> clean = mlp(gather_rows(h, std::span<const Index>(route->clean)));
  const Tensor<Scalar> masked = mlp_masked(gather_rows(h, std::span<const Index>(route->masked)));
  return merge_rows(clean, std::span<const Index>(route->clean), masked, std::span<const Index>(route->masked),
                    x.rows());
}

template <typename Scalar>
Tensor<Scalar> TransformerBlock<Scalar>::forward(const Tensor<Scalar>& x, const AttentionMask& mask,
                                                 const RowRoute* route) const {
  const Tensor<Scalar> h = norm1(x);
  const Tensor<Scalar> a = attention(to_q(h), to_k(h), to_v(h), mask, heads);
  const Tensor<Scalar> x1 = add(x, to_out(a));
  return add(x1, feed_forward(x1, route));
}

template <typename Scalar>
Tensor<Scalar> TransformerBlock<Scalar>::forward_cached(const Tensor<Scalar>& x, KVCacheLayer<Scalar>& cache,
                                                        std::span<const int> frame_ids) const {
  if (active_tape<Scalar>() != nullptr && x.requires_grad()) {
    throw std::logic_error("forward_cached is inference-only; use forward() under a tape");
  }
  const Tensor<Scalar> h = norm1(x);
  const Matrix<Scalar> a =
      attend_with_cache(cache, to_q(h).value(), to_k(h).value(), to_v(h).value(), frame_ids, heads);
  const Tensor<Scalar> x1 = add(x, to_out(constant<Scalar>(a)));
  return add(x1, feed_forward(x1, nullptr));
}

template <typename Scalar>
void TransformerBlock<Scalar>::collect(ParamList<Scalar>& out) const {
  norm1.collect(out);
  to_q.collect(out);
  to_k.collect(out);
  to_v.collect(out);
  to_out.collect(out);
  norm2.collect(out);
  mlp.collect(out);
  if (dual) mlp_masked.collect(out);
}

template Matrix<float> sinusoidal_pe<float>(Index, Index);
template Matrix<double> sinusoidal_pe<double>(Index, Index);
template Matrix<float> xavier_uniform<float>(RngStream&, Index, Index);
template Matrix<double> xavier_uniform<double>(RngStream&, Index, Index);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace canvasmar
