#pragma once

#include <span>
#include <vector>

#include "canvasmar/numerics/ops.hpp"

namespace canvasmar {

/// Causal across frames, bidirectional inside a frame: token q of frame i may
/// attend to token k of frame j iff j <= i.
AttentionMask build_hybrid_mask(int num_frames, int tokens_per_frame);

/// Append-only keys/values of one attention layer, tagged with frame index.
template <typename Scalar>
struct KVCacheLayer {
  Matrix<Scalar> keys;
  Matrix<Scalar> values;
  std::vector<int> frame_ids;

  Index length() const { return static_cast<Index>(frame_ids.size()); }
};

template <typename Scalar>
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(int layers) : layers_(static_cast<std::size_t>(layers)) {}

  int num_layers() const { return static_cast<int>(layers_.size()); }
  KVCacheLayer<Scalar>& layer(int l) { return layers_.at(static_cast<std::size_t>(l)); }
  const KVCacheLayer<Scalar>& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }

  Index length() const { return layers_.empty() ? 0 : layers_.front().length(); }
  /// Number of whole frames held.
  int frames() const;
  bool empty() const { return length() == 0; }
  void clear();

 private:
  std::vector<KVCacheLayer<Scalar>> layers_;
};

/// Attends the new queries over cached plus new keys under the hybrid rule,
/// then appends the new keys/values. Frame ids of new tokens must be
/// non-decreasing and strictly after every cached frame. Equivalent to the
/// uncached pass over the concatenated sequence.
template <typename Scalar>
Matrix<Scalar> attend_with_cache(KVCacheLayer<Scalar>& cache, const Matrix<Scalar>& new_q, const Matrix<Scalar>& new_k,
                                 const Matrix<Scalar>& new_v, std::span<const int> frame_ids, int heads);

}  // namespace canvasmar
