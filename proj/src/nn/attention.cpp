#include "canvasmar/nn/attention.hpp"

#include <stdexcept>

namespace canvasmar {

AttentionMask build_hybrid_mask(int num_frames, int tokens_per_frame) {
  if (num_frames < 1 || tokens_per_frame < 1) throw std::invalid_argument("build_hybrid_mask: sizes must be >= 1");
  const Index length = static_cast<Index>(num_frames) * tokens_per_frame;
  AttentionMask mask(length, length, 1, false);
  for (Index q = 0; q < length; ++q) {
    const Index visible = (q / tokens_per_frame + 1) * tokens_per_frame;
    for (Index k = 0; k < visible; ++k) mask.set(q, k, true);
  }
  return mask;
}

template <typename Scalar>
int KVCache<Scalar>::frames() const {
  if (layers_.empty() || layers_.front().frame_ids.empty()) return 0;
  const auto& ids = layers_.front().frame_ids;
  int count = 1;
  for (std::size_t i = 1; i < ids.size(); ++i)
    if (ids[i] != ids[i - 1]) ++count;
  return count;
}

template <typename Scalar>
void KVCache<Scalar>::clear() {
  for (auto& l : layers_) l = KVCacheLayer<Scalar>{};
}

template <typename Scalar>
Matrix<Scalar> attend_with_cache(KVCacheLayer<Scalar>& cache, const Matrix<Scalar>& new_q, const Matrix<Scalar>& new_k,
                                 const Matrix<Scalar>& new_v, std::span<const int> frame_ids, int heads) {
  const Index added = new_q.rows();
  if (new_k.rows() != added || new_v.rows() != added || static_cast<Index>(frame_ids.size()) != added) {
    throw std::invalid_argument("attend_with_cache: q/k/v/frame id counts differ");
  }
  if (added == 0) return Matrix<Scalar>(0, new_q.cols());
  for (Index i = 1; i < added; ++i) {
    if (frame_ids[static_cast<std::size_t>(i)] < frame_ids[static_cast<std::size_t>(i - 1)]) {
      throw std::invalid_argument("attend_with_cache: new frame ids must be non-decreasing");
    }
  }
  if (!cache.frame_ids.empty() && frame_ids.front() <= cache.frame_ids.back()) {
    throw std::invalid_argument("attend_with_cache: out-of-order append (frame " + std::to_string(frame_ids.front()) +
                                " after cached frame " + std::to_string(cache.frame_ids.back()) + ")");
  }
  const Index old_len = cache.length();
  if (old_len > 0 && (cache.keys.cols() != new_k.cols() || cache.values.cols() != new_v.cols())) {
    throw std::invalid_argument("attend_with_cache: width mismatch with cached keys");
  }
  const Index total = old_len + added;
  Matrix<Scalar> keys(total, new_k.cols());
  Matrix<Scalar> values(total, new_v.cols());
  if (old_len > 0) {
    keys.topRows(old_len) = cache.keys;
    values.topRows(old_len) = cache.values;
  }
  keys.bottomRows(added) = new_k;
  values.bottomRows(added) = new_v;
  std::vector<int> ids = cache.frame_ids;
  ids.insert(ids.end(), frame_ids.begin(), frame_ids.end());

  AttentionMask mask(added, total, 1, false);
  for (Index q = 0; q < added; ++q) {
    const int fq = frame_ids[static_cast<std::size_t>(q)];
    for (Index k = 0; k < total; ++k) mask.set(q, k, ids[static_cast<std::size_t>(k)] <= fq);
  }
  Matrix<Scalar> out = attention_values(new_q, keys, values, mask, heads);
  cache.keys = std::move(keys);
  cache.values = std::move(values);
  cache.frame_ids = std::move(ids);
  return out;
}

template class KVCache<float>;
template class KVCache<double>;
template Matrix<float> attend_with_cache(KVCacheLayer<float>&, const Matrix<float>&, const Matrix<float>&,
                                         const Matrix<float>&, std::span<const int>, int);
template Matrix<double> attend_with_cache(KVCacheLayer<double>&, const Matrix<double>&, const Matrix<double>&,
                                          const Matrix<double>&, std::span<const int>, int);

}  // namespace canvasmar
