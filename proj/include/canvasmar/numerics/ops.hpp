#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "canvasmar/numerics/tensor.hpp"

namespace canvasmar {

/// Boolean attention pattern, true = query may attend to key. Holds either a
/// single pattern shared by every batch item or one pattern per item.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(Index queries, Index keys, Index batch = 1, bool fill = true)
      : queries_(queries), keys_(keys), batch_(batch),
        allowed_(static_cast<std::size_t>(queries * keys * batch), fill ? 1 : 0) {}

  static AttentionMask dense(Index queries, Index keys) { return AttentionMask(queries, keys, 1, true); }

  Index queries() const { return queries_; }
  Index keys() const { return keys_; }
  Index batch() const { return batch_; }

  bool operator()(Index q, Index k) const { return at(0, q, k); }
  bool at(Index b, Index q, Index k) const { return allowed_[offset(b, q, k)] != 0; }
  void set(Index b, Index q, Index k, bool value) { allowed_[offset(b, q, k)] = value ? 1 : 0; }
  void set(Index q, Index k, bool value) { set(0, q, k, value); }

  bool all_true() const {
    for (auto a : allowed_)
      if (!a) return false;
    return true;
  }
  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t offset(Index b, Index q, Index k) const {
    return static_cast<std::size_t>((b * queries_ + q) * keys_ + k);
  }
  Index queries_ = 0, keys_ = 0, batch_ = 1;
  std::vector<std::uint8_t> allowed_;
};

/// Wraps a value that never receives gradients.
template <typename Scalar>
Tensor<Scalar> constant(Matrix<Scalar> value) {
  return Tensor<Scalar>(std::move(value), false);
}

template <typename Scalar> Tensor<Scalar> detach(const Tensor<Scalar>& a);

template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// x * w + b, with b a 1 x out row broadcast over rows.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b);

template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s);
/// Multiplies row r of `a` by factors[r].
template <typename Scalar>
Tensor<Scalar> scale_rows(const Tensor<Scalar>& a, const std::vector<Scalar>& factors);
/// a + row, with row 1 x cols broadcast over rows.
template <typename Scalar> Tensor<Scalar> add_row(const Tensor<Scalar>& a, const Tensor<Scalar>& row);
/// Stacks `times` copies of `a` vertically.
template <typename Scalar> Tensor<Scalar> repeat_rows(const Tensor<Scalar>& a, Index times);

template <typename Scalar> Tensor<Scalar> gelu(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sin(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> square(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5));

template <typename Scalar> Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts);
template <typename Scalar> Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index begin, Index count);
template <typename Scalar> Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::span<const Index> rows);
/// Output with `total` rows: row index_a[i] takes a.row(i), row index_b[i]
/// takes b.row(i). The two index sets must partition [0, total).
template <typename Scalar>
Tensor<Scalar> merge_rows(const Tensor<Scalar>& a, std::span<const Index> index_a, const Tensor<Scalar>& b,
                          std::span<const Index> index_b, Index total);

/// Multi-head scaled dot-product attention over `mask.batch()`-or-inferred
/// batch items stacked along rows. q holds B*Lq rows, k and v B*Lk rows, with
/// Lq x Lk given by the mask. Softmax runs only over allowed keys; a query row
/// with no allowed key is an error.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                         const AttentionMask& mask, int heads);

/// Value-level attention kernel shared by the differentiable op and the KV
/// cache path. When `probs` is non-null it receives one Lq x Lk softmax
/// matrix per (batch, head), batch-major.
template <typename Scalar>
Matrix<Scalar> attention_values(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                const AttentionMask& mask, int heads, std::vector<Matrix<Scalar>>* probs = nullptr);

template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }

}  // namespace canvasmar
