#include "canvasmar/numerics/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace canvasmar {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RngStream RngStream::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ull));
  return RngStream(h, 0);
}

RngStream RngStream::child(std::initializer_list<std::uint64_t> keys) const {
  return derive(seed_, keys);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t k = counter_++;
  return mix64(mix64(seed_) ^ (k * 0xD1B54A32D192ED03ull));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename Scalar>
Matrix<Scalar> gaussian(RngStream& rng, Index rows, Index cols) {
  Matrix<Scalar> out(rows, cols);
  Scalar* p = out.data();
  const Index n = out.size();
  Index i = 0;
  for (; i + 1 < n; i += 2) {
    const double u1 = (static_cast<double>(rng.next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = rng.uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    p[i] = static_cast<Scalar>(radius * std::cos(angle));
    p[i + 1] = static_cast<Scalar>(radius * std::sin(angle));
  }
  if (i < n) p[i] = static_cast<Scalar>(rng.normal());
  return out;
}

template <typename Scalar>
Tensor<Scalar> gaussian(RngStream& rng, const std::vector<Index>& shape) {
  if (shape.empty()) throw std::invalid_argument("gaussian: shape must be non-empty");
  Index rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return Tensor<Scalar>(gaussian<Scalar>(rng, rows, shape.back()));
}

template Matrix<float> gaussian<float>(RngStream&, Index, Index);
template Matrix<double> gaussian<double>(RngStream&, Index, Index);
template Tensor<float> gaussian<float>(RngStream&, const std::vector<Index>&);
template Tensor<double> gaussian<double>(RngStream&, const std::vector<Index>&);

}  // namespace canvasmar
