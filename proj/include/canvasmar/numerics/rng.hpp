#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "canvasmar/numerics/tensor.hpp"

namespace canvasmar {

/// Counter-based generator: draw k of stream `seed` is a pure function of
/// (seed, k), so results do not depend on platform or library versions of
/// <random>. Gaussians use Box-Muller on two uniforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  /// Independent substream identified by a key path, e.g. (seed, frame, token).
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);
  RngStream child(std::initializer_list<std::uint64_t> keys) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);

/// i.i.d. standard normal draws filling a rows x cols tensor (row-major order).
template <typename Scalar>
Matrix<Scalar> gaussian(RngStream& rng, Index rows, Index cols);

/// Shape-list form; the trailing extent becomes the column count.
template <typename Scalar>
Tensor<Scalar> gaussian(RngStream& rng, const std::vector<Index>& shape);

}  // namespace canvasmar
