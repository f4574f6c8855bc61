#include "canvasmar/model/networks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace canvasmar {
namespace {

template <typename Scalar>
Tensor<Scalar> small_normal(RngStream& rng, Index rows, Index cols, const std::string& name) {
  Matrix<Scalar> m = gaussian<Scalar>(rng, rows, cols) * Scalar(0.02);
  return Tensor<Scalar>::parameter(std::move(m), name);
}

}  // namespace

// ---------------------------------------------------------------- temporal

template <typename Scalar>
TemporalVit<Scalar>::TemporalVit(const ModelConfig& config, RngStream& rng)
    : tokens_(config.tokens()),
      max_frames_(config.max_frames),
      in_proj_(config.token_dim(), config.dim, rng, "temporal.in_proj"),
      position_(small_normal<Scalar>(rng, config.tokens(), config.dim, "temporal.position")),
      frame_position_(small_normal<Scalar>(rng, config.max_frames, config.dim, "temporal.frame_position")),
      uncond_(small_normal<Scalar>(rng, 1, config.dim, "temporal.uncond")),
      uncond_code_(sinusoidal_pe<Scalar>(config.tokens(), config.dim)),
      norm_(config.dim, "temporal.norm") {
  for (int l = 0; l < config.temporal_layers; ++l) {
    blocks_.emplace_back(config.dim, config.heads, config.mlp_ratio, false, rng, "temporal.block" + std::to_string(l));
  }
}

template <typename Scalar>
Tensor<Scalar> TemporalVit<Scalar>::embed(const Matrix<Scalar>& tokens, int first_frame, int num_frames,
                                          int videos) const {
  if (num_frames < 1 || videos < 1 || tokens.rows() != videos * num_frames * tokens_) {
    throw std::invalid_argument("TemporalVit: token rows do not match frame count");
  }
  if (first_frame < 0 || first_frame + num_frames > max_frames_) {
    throw std::invalid_argument("TemporalVit: frames " + std::to_string(first_frame) + ".." +
                                std::to_string(first_frame + num_frames - 1) + " exceed max_frames " +
                                std::to_string(max_frames_));
  }
  std::vector<Index> frame_rows(static_cast<std::size_t>(tokens.rows()));
  for (Index i = 0; i < static_cast<Index>(frame_rows.size()); ++i) {
    frame_rows[i] = first_frame + (i / tokens_) % num_frames;
  }
  const Tensor<Scalar> x = in_proj_(constant<Scalar>(tokens));
  return add(add(x, repeat_rows(position_, videos * num_frames)),
             gather_rows(frame_position_, std::span<const Index>(frame_rows)));
}

template <typename Scalar>
Tensor<Scalar> TemporalVit<Scalar>::forward(const Matrix<Scalar>& tokens, int num_frames, int videos) const {
  Tensor<Scalar> x = embed(tokens, 0, num_frames, videos);
  const AttentionMask mask = build_hybrid_mask(num_frames, static_cast<int>(tokens_));
  for (const auto& block : blocks_) x = block.forward(x, mask);
  return norm_(x);
}

template <typename Scalar>
Tensor<Scalar> TemporalVit<Scalar>::forward_cached(const Matrix<Scalar>& tokens, int first_frame, int num_frames,
                                                   KVCache<Scalar>& cache) const {
  if (cache.num_layers() != layers()) throw std::invalid_argument("TemporalVit: cache layer count mismatch");
  Tensor<Scalar> x = embed(tokens, first_frame, num_frames, 1);
  std::vector<int> ids(static_cast<std::size_t>(num_frames * tokens_));
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = first_frame + static_cast<int>(static_cast<Index>(i) / tokens_);
  for (int l = 0; l < layers(); ++l) x = blocks_[static_cast<std::size_t>(l)].forward_cached(x, cache.layer(l), ids);
  return norm_(x);
}

template <typename Scalar>
Tensor<Scalar> TemporalVit<Scalar>::unconditional() const {
  return add_row(constant<Scalar>(uncond_code_), uncond_);
}

template <typename Scalar>
void TemporalVit<Scalar>::collect(ParamList<Scalar>& out) const {
  in_proj_.collect(out);
  out.emplace_back(position_.name(), position_);
  out.emplace_back(frame_position_.name(), frame_position_);
  out.emplace_back(uncond_.name(), uncond_);
  for (const auto& b : blocks_) b.collect(out);
  norm_.collect(out);
}

// ---------------------------------------------------------------- canvas

template <typename Scalar>
CanvasVit<Scalar>::CanvasVit(const ModelConfig& config, RngStream& rng)
    : tokens_(config.tokens()),
      prev_proj_(config.token_dim(), config.dim, rng, "canvas.prev_proj"),
      norm_(config.dim, "canvas.norm"),
      projection_(config.dim, config.token_dim(), rng, "canvas.projection") {
  for (int l = 0; l < config.canvas_layers; ++l) {
    blocks_.emplace_back(config.dim, config.heads, config.mlp_ratio, false, rng, "canvas.block" + std::to_string(l));
  }
  for (int g = 0; g < config.group_size; ++g) {
    heads_.emplace_back(config.dim, config.dim, config.dim, rng, "canvas.head" + std::to_string(g));
  }
}

template <typename Scalar>
Tensor<Scalar> CanvasVit<Scalar>::trunk(const Tensor<Scalar>& zt, const Matrix<Scalar>& prev_tokens) const {
  if (zt.rows() != prev_tokens.rows() || zt.rows() % tokens_ != 0) {
    throw std::invalid_argument("CanvasVit: temporal embedding and previous frame disagree in shape");
  }
  Tensor<Scalar> x = add(zt, prev_proj_(constant<Scalar>(prev_tokens)));
  const AttentionMask mask = AttentionMask::dense(tokens_, tokens_);
  for (const auto& block : blocks_) x = block.forward(x, mask);
  return norm_(x);
}

template <typename Scalar>
Tensor<Scalar> CanvasVit<Scalar>::head(int offset, const Tensor<Scalar>& trunk_out) const {
  if (offset < 0 || offset >= group_size()) {
    throw std::invalid_argument("CanvasVit: group offset " + std::to_string(offset + 1) + " exceeds group size " +
                                std::to_string(group_size()));
  }
  return heads_[static_cast<std::size_t>(offset)](trunk_out);
}

template <typename Scalar>
void CanvasVit<Scalar>::grow_heads(int group_size) {
  while (static_cast<int>(heads_.size()) < group_size) {
    const std::string name = "canvas.head" + std::to_string(heads_.size());
    const auto& src = heads_.front();
    Mlp<Scalar> copy;
    copy.fc1.weight = Tensor<Scalar>::parameter(src.fc1.weight.value(), name + ".fc1.weight");
    copy.fc1.bias = Tensor<Scalar>::parameter(src.fc1.bias.value(), name + ".fc1.bias");
    copy.fc2.weight = Tensor<Scalar>::parameter(src.fc2.weight.value(), name + ".fc2.weight");
    copy.fc2.bias = Tensor<Scalar>::parameter(src.fc2.bias.value(), name + ".fc2.bias");
    heads_.push_back(std::move(copy));
  }
}

template <typename Scalar>
void CanvasVit<Scalar>::collect(ParamList<Scalar>& out) const {
  prev_proj_.collect(out);
  for (const auto& b : blocks_) b.collect(out);
  norm_.collect(out);
  for (const auto& h : heads_) h.collect(out);
  projection_.collect(out);
}

// ---------------------------------------------------------------- spatial

template <typename Scalar>
GroupAttention<Scalar>::GroupAttention(Index dim, int heads_, RngStream& rng, const std::string& name)
    : norm(dim, name + ".norm"),
      to_q(dim, dim, rng, name + ".q"),
      to_k(dim, dim, rng, name + ".k"),
      to_v(dim, dim, rng, name + ".v"),
      to_out(dim, dim, rng, name + ".out"),
      heads(heads_) {
  to_out.weight.mutable_value().setZero();
}

template <typename Scalar>
Tensor<Scalar> GroupAttention<Scalar>::forward(const Tensor<Scalar>& x, int group, Index seq) const {
  const Index items = x.rows() / seq;
  if (group < 2 || items % group != 0 || items * seq != x.rows()) {
    throw std::invalid_argument("GroupAttention: rows do not split into whole groups");
  }
  const Index jobs = items / group;
  // Gather so that the `group` rows sharing (job, position) are adjacent.
  std::vector<Index> order(static_cast<std::size_t>(x.rows())), inverse(order.size());
  for (Index b = 0; b < jobs; ++b)
    for (Index p = 0; p < seq; ++p)
      for (Index g = 0; g < group; ++g) {
        const Index to = (b * seq + p) * group + g;
        const Index from = (b * group + g) * seq + p;
        order[static_cast<std::size_t>(to)] = from;
        inverse[static_cast<std::size_t>(from)] = to;
      }
  const Tensor<Scalar> h = gather_rows(norm(x), std::span<const Index>(order));
  const Tensor<Scalar> a = attention(to_q(h), to_k(h), to_v(h), AttentionMask::dense(group, group), heads);
  return add(x, gather_rows(to_out(a), std::span<const Index>(inverse)));
}

template <typename Scalar>
void GroupAttention<Scalar>::collect(ParamList<Scalar>& out) const {
  norm.collect(out);
  to_q.collect(out);
  to_k.collect(out);
  to_v.collect(out);
  to_out.collect(out);
}

template <typename Scalar>
SpatialMar<Scalar>::SpatialMar(const ModelConfig& config, RngStream& rng)
    : tokens_(config.tokens()),
      heads_(config.heads),
      dim_(config.dim),
      encoder_depth_(config.spatial_encoder_depth),
      in_proj_(config.token_dim(), config.dim, rng, "spatial.in_proj"),
      position_(small_normal<Scalar>(rng, config.tokens(), config.dim, "spatial.position")),
      context_position_(small_normal<Scalar>(rng, config.tokens(), config.dim, "spatial.context_position")),
      mask_token_(small_normal<Scalar>(rng, 1, config.dim, "spatial.mask_token")),
      norm_(config.dim, "spatial.norm") {
  for (int l = 0; l < config.spatial_layers; ++l) {
    const bool decoder = l >= encoder_depth_;
    blocks_.emplace_back(config.dim, config.heads, config.mlp_ratio, decoder, rng, "spatial.block" + std::to_string(l));
  }
  set_group_size(config.group_size, rng);
}

template <typename Scalar>
bool SpatialMar<Scalar>::group_layer_after(std::size_t block) const {
  // After every fourth decoder block, and after the last one.
  if (block < static_cast<std::size_t>(encoder_depth_)) return false;
  const std::size_t d = block - static_cast<std::size_t>(encoder_depth_);
  return d % 4 == 3 || block + 1 == blocks_.size();
}

template <typename Scalar>
void SpatialMar<Scalar>::set_group_size(int group_size, RngStream& rng) {
  if (group_size < 1) throw std::invalid_argument("SpatialMar: group size must be >= 1");
  group_size_ = group_size;
  if (group_size < 2 || !group_layers_.empty()) return;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    if (group_layer_after(l)) {
      group_layers_.emplace_back(dim_, heads_, rng, "spatial.group" + std::to_string(group_layers_.size()));
    }
  }
}

template <typename Scalar>
Tensor<Scalar> SpatialMar<Scalar>::forward(const SpatialBatch<Scalar>& batch) const {
  const Index n = tokens_;
  const Index items = batch.items;
  const Index frame_rows = items * n;
  if (items < 1 || batch.tokens.rows() != frame_rows || static_cast<Index>(batch.known.size()) != frame_rows ||
      batch.zt.rows() != frame_rows || static_cast<Index>(batch.canvas_on.size()) != items) {
    throw std::invalid_argument("SpatialMar: batch fields disagree in size");
  }
  if (batch.group < 1 || batch.group > group_size_ || items % batch.group != 0) {
    throw std::invalid_argument("SpatialMar: batch group " + std::to_string(batch.group) +
                                " incompatible with configured group size " + std::to_string(group_size_));
  }

  std::vector<Index> clean, masked, canvas_rows, canvas_local, mask_local;
  for (Index r = 0; r < frame_rows; ++r) {
    if (batch.known[static_cast<std::size_t>(r)]) {
      clean.push_back(r);
      continue;
    }
    const Index local = static_cast<Index>(masked.size());
    masked.push_back(r);
    if (batch.canvas_on[static_cast<std::size_t>(r / n)]) {
      canvas_rows.push_back(r);
      canvas_local.push_back(local);
    } else {
      mask_local.push_back(local);
    }
  }
  if (masked.empty()) return constant<Scalar>(Matrix<Scalar>(0, dim_));
  if (!canvas_rows.empty() && !batch.canvas.defined()) throw std::invalid_argument("SpatialMar: canvas requested but missing");

  // Masked-position inputs: canvas rows where enabled, the mask vector elsewhere.
  Tensor<Scalar> masked_src;
  if (mask_local.empty()) {
    masked_src = gather_rows(batch.canvas, std::span<const Index>(canvas_rows));
  } else if (canvas_rows.empty()) {
    masked_src = repeat_rows(mask_token_, static_cast<Index>(mask_local.size()));
  } else {
    masked_src = merge_rows(gather_rows(batch.canvas, std::span<const Index>(canvas_rows)),
                            std::span<const Index>(canvas_local),
                            repeat_rows(mask_token_, static_cast<Index>(mask_local.size())),
                            std::span<const Index>(mask_local), static_cast<Index>(masked.size()));
  }
  Tensor<Scalar> frame_in;
  if (clean.empty()) {
    frame_in = masked_src;
  } else {
    Matrix<Scalar> clean_tokens(static_cast<Index>(clean.size()), batch.tokens.cols());
    for (std::size_t i = 0; i < clean.size(); ++i) clean_tokens.row(static_cast<Index>(i)) = batch.tokens.row(clean[i]);
    frame_in = merge_rows(in_proj_(constant<Scalar>(std::move(clean_tokens))), std::span<const Index>(clean), masked_src,
                          std::span<const Index>(masked), frame_rows);
  }
  frame_in = add(frame_in, repeat_rows(position_, items));
  const Tensor<Scalar> context = add(batch.zt, repeat_rows(context_position_, items));

  // Sequence layout per item: [context (n) ; frame (n)].
  const Index seq = 2 * n;
  std::vector<Index> context_seq(static_cast<std::size_t>(frame_rows)), frame_seq(static_cast<std::size_t>(frame_rows));
  for (Index r = 0; r < frame_rows; ++r) {
    context_seq[r] = (r / n) * seq + r % n;
    frame_seq[r] = (r / n) * seq + n + r % n;
  }
  Tensor<Scalar> x = merge_rows(context, std::span<const Index>(context_seq), frame_in,
                                std::span<const Index>(frame_seq), items * seq);

  std::vector<Index> keep_seq, masked_seq;
  for (Index r = 0; r < items * seq; ++r) {
    const Index local = r % seq;
    const bool is_masked = local >= n && !batch.known[static_cast<std::size_t>((r / seq) * n + local - n)];
    (is_masked ? masked_seq : keep_seq).push_back(r);
  }

  if (encoder_depth_ > 0) {
    AttentionMask encoder_mask(seq, seq, items, true);
    for (Index b = 0; b < items; ++b)
      for (Index k = n; k < seq; ++k)
        if (!batch.known[static_cast<std::size_t>(b * n + k - n)])
          for (Index q = 0; q < seq; ++q) encoder_mask.set(b, q, k, false);
    Tensor<Scalar> h = x;
    for (int l = 0; l < encoder_depth_; ++l) h = blocks_[static_cast<std::size_t>(l)].forward(h, encoder_mask);
    x = merge_rows(gather_rows(h, std::span<const Index>(keep_seq)), std::span<const Index>(keep_seq),
                   gather_rows(x, std::span<const Index>(masked_seq)), std::span<const Index>(masked_seq), items * seq);
  }

  const RowRoute route{keep_seq, masked_seq};
  const AttentionMask decoder_mask = AttentionMask::dense(seq, seq);
  std::size_t group_layer = 0;
  for (std::size_t l = static_cast<std::size_t>(encoder_depth_); l < blocks_.size(); ++l) {
    x = blocks_[l].forward(x, decoder_mask, &route);
    if (group_layer_after(l) && group_layer < group_layers_.size()) {
      if (batch.group > 1) x = group_layers_[group_layer].forward(x, batch.group, seq);
      ++group_layer;
    }
  }
  return gather_rows(norm_(x), std::span<const Index>(masked_seq));
}

template <typename Scalar>
void SpatialMar<Scalar>::collect(ParamList<Scalar>& out) const {
  in_proj_.collect(out);
  out.emplace_back(position_.name(), position_);
  out.emplace_back(context_position_.name(), context_position_);
  out.emplace_back(mask_token_.name(), mask_token_);
  for (const auto& b : blocks_) b.collect(out);
  for (const auto& g : group_layers_) g.collect(out);
  norm_.collect(out);
}

// ---------------------------------------------------------------- flow head

template <typename Scalar>
FlowHead<Scalar>::FlowHead(const ModelConfig& config, RngStream& rng)
    : in_x_(config.token_dim(), config.flow_dim, rng, "flow.in_x"),
      in_z_(config.dim, config.flow_dim, rng, "flow.in_z"),
      in_t_(kTimeFeatures, config.flow_dim, rng, "flow.in_t"),
      out_(config.flow_dim, config.token_dim(), rng, "flow.out") {
  for (int l = 1; l < config.flow_layers; ++l) {
    hidden_.emplace_back(config.flow_dim, config.flow_dim, rng, "flow.hidden" + std::to_string(l));
  }
  // Zero velocity at initialization.
  out_.weight.mutable_value().setZero();
}

template <typename Scalar>
Tensor<Scalar> FlowHead<Scalar>::velocity(const Tensor<Scalar>& x_t, const std::vector<Scalar>& t,
                                          const Tensor<Scalar>& z) const {
  if (x_t.rows() != z.rows() || static_cast<Index>(t.size()) != x_t.rows()) {
    throw std::invalid_argument("FlowHead: x_t, t and z must have one row per token");
  }
  Matrix<Scalar> features(x_t.rows(), kTimeFeatures);
  for (Index r = 0; r < x_t.rows(); ++r) {
    const Scalar tr = t[static_cast<std::size_t>(r)];
    if (!(tr >= Scalar(0) && tr <= Scalar(1))) throw std::invalid_argument("FlowHead: t outside [0, 1]");
    for (int k = 0; k < kTimeFeatures / 2; ++k) {
      const Scalar w = std::numbers::pi_v<Scalar> * static_cast<Scalar>(1 << k) / Scalar(2);
      features(r, 2 * k) = std::sin(w * tr);
      features(r, 2 * k + 1) = std::cos(w * tr);
    }
  }
  Tensor<Scalar> h = gelu(add(add(in_x_(x_t), in_z_(z)), in_t_(constant<Scalar>(std::move(features)))));
  for (const auto& layer : hidden_) h = gelu(layer(h));
  return out_(h);
}

template <typename Scalar>
void FlowHead<Scalar>::collect(ParamList<Scalar>& out) const {
  in_x_.collect(out);
  in_z_.collect(out);
  in_t_.collect(out);
  for (const auto& l : hidden_) l.collect(out);
  out_.collect(out);
}

template class TemporalVit<float>;
template class TemporalVit<double>;
template class CanvasVit<float>;
template class CanvasVit<double>;
template struct GroupAttention<float>;
template struct GroupAttention<double>;
template class SpatialMar<float>;
template class SpatialMar<double>;
template class FlowHead<float>;
template class FlowHead<double>;

}  // namespace canvasmar
