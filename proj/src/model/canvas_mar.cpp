#include "canvasmar/model/canvas_mar.hpp"

#include <stdexcept>
#include <string>

namespace canvasmar {

template <typename Scalar>
CanvasMar<Scalar>::CanvasMar(const ModelConfig& config_, std::uint64_t seed_) : config(config_), seed(seed_) {
  config.validate();
  RngStream t = RngStream::derive(seed, {1});
  RngStream c = RngStream::derive(seed, {2});
  RngStream s = RngStream::derive(seed, {3});
  RngStream f = RngStream::derive(seed, {4});
  temporal = TemporalVit<Scalar>(config, t);
  canvas = CanvasVit<Scalar>(config, c);
  spatial = SpatialMar<Scalar>(config, s);
  flow = FlowHead<Scalar>(config, f);
}

template <typename Scalar>
ParamList<Scalar> CanvasMar<Scalar>::parameters() const {
  ParamList<Scalar> out;
  temporal.collect(out);
  canvas.collect(out);
  spatial.collect(out);
  flow.collect(out);
  return out;
}

template <typename Scalar>
void CanvasMar<Scalar>::set_group_size(int group_size) {
  if (group_size < 1) throw std::invalid_argument("set_group_size: group size must be >= 1");
  if (group_size < config.group_size) throw std::invalid_argument("set_group_size: cannot shrink the group size");
  config.group_size = group_size;
  canvas.grow_heads(group_size);
  RngStream g = RngStream::derive(seed, {5, static_cast<std::uint64_t>(group_size)});
  spatial.set_group_size(group_size, g);
}

template <typename Scalar>
TemporalEmbedding<Scalar> temporal_forward(const CanvasMar<Scalar>& model, std::span<const TokenGrid> history,
                                           KVCache<Scalar>* cache) {
  if (history.empty()) throw std::invalid_argument("temporal_forward: empty history");
  const Index n = model.config.tokens();
  const int total = static_cast<int>(history.size());
  if (cache != nullptr && cache->num_layers() == 0) *cache = KVCache<Scalar>(model.temporal.layers());
  const int cached = cache == nullptr ? 0 : cache->frames();
  if (cache != nullptr && (cached >= total || cache->length() != static_cast<Index>(cached) * n)) {
    throw std::invalid_argument("temporal_forward: cache holds " + std::to_string(cached) +
                                " frames, history has " + std::to_string(total));
  }
  const int first = cached;
  Matrix<Scalar> tokens(static_cast<Index>(total - first) * n, model.config.token_dim());
  for (int f = first; f < total; ++f) {
    if (history[f].tokens.rows() != n || history[f].tokens.cols() != model.config.token_dim()) {
      throw std::invalid_argument("temporal_forward: frame " + std::to_string(f) + " has the wrong token shape");
    }
    tokens.middleRows(static_cast<Index>(f - first) * n, n) = to_scalar<Scalar>(history[f].tokens);
  }
  Tensor<Scalar> out;
  if (cache != nullptr) {
    out = model.temporal.forward_cached(tokens, first, total - first, *cache);
  } else {
    out = model.temporal.forward(tokens, total);
  }
  return {slice_rows(out, out.rows() - n, n), history.back().frame_index + 1};
}

template <typename Scalar>
std::vector<CanvasEmbedding<Scalar>> canvas_forward(const CanvasMar<Scalar>& model,
                                                    const TemporalEmbedding<Scalar>& zt, const TokenGrid& prev_frame,
                                                    int group_size) {
  if (group_size < 1 || group_size > model.canvas.group_size()) {
    throw std::invalid_argument("canvas_forward: group size " + std::to_string(group_size) +
                                " exceeds configured " + std::to_string(model.canvas.group_size()));
  }
  const Tensor<Scalar> trunk = model.canvas.trunk(zt.zt, to_scalar<Scalar>(prev_frame.tokens));
  std::vector<CanvasEmbedding<Scalar>> out;
  for (int g = 0; g < group_size; ++g) out.push_back({model.canvas.head(g, trunk), g + 1});
  return out;
}

template <typename Scalar>
TokenGrid canvas_project(const CanvasMar<Scalar>& model, const CanvasEmbedding<Scalar>& zs) {
  return {model.canvas.project(zs.zs).value().template cast<float>(), zs.group_offset - 1};
}

template <typename Scalar>
Tensor<Scalar> spatial_forward(const CanvasMar<Scalar>& model, const TokenGrid& frame, std::span<const Index> known,
                               std::span<const Index> masked, const CanvasEmbedding<Scalar>* canvas,
                               const TemporalEmbedding<Scalar>& zt) {
  const Index n = model.config.tokens();
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (Index j : known) {
    if (j < 0 || j >= n || seen[static_cast<std::size_t>(j)]++) throw std::invalid_argument("spatial_forward: bad known index");
  }
  for (Index j : masked) {
    if (j < 0 || j >= n) throw std::invalid_argument("spatial_forward: masked index out of range");
    if (seen[static_cast<std::size_t>(j)]++) throw std::invalid_argument("spatial_forward: known and masked sets overlap");
  }
  for (int s : seen)
    if (s == 0) throw std::invalid_argument("spatial_forward: known and masked sets do not cover every position");

  SpatialBatch<Scalar> batch;
  batch.items = 1;
  batch.tokens = to_scalar<Scalar>(frame.tokens);
  batch.known.assign(static_cast<std::size_t>(n), 0);
  for (Index j : known) batch.known[static_cast<std::size_t>(j)] = 1;
  batch.zt = zt.zt;
  batch.canvas_on = {static_cast<std::uint8_t>(canvas != nullptr)};
  if (canvas != nullptr) batch.canvas = canvas->zs;
  return model.spatial.forward(batch);
}

template <typename Scalar>
Tensor<Scalar> flow_velocity(const CanvasMar<Scalar>& model, const Tensor<Scalar>& x_t, Scalar t,
                             const Tensor<Scalar>& z) {
  return model.flow.velocity(x_t, std::vector<Scalar>(static_cast<std::size_t>(x_t.rows()), t), z);
}

template <typename Scalar>
Matrix<Scalar> flow_integrate(const CanvasMar<Scalar>& model, const Tensor<Scalar>& z, Matrix<Scalar> x, int steps) {
  if (steps < 1) throw std::invalid_argument("flow_integrate: steps must be >= 1");
  const Scalar h = Scalar(1) / static_cast<Scalar>(steps);
  for (int s = 0; s < steps; ++s) {
    const Scalar t = static_cast<Scalar>(s) / static_cast<Scalar>(steps);
    x += h * flow_velocity(model, constant<Scalar>(x), t, z).value();
  }
  return x;
}

template <typename Scalar>
Matrix<Scalar> flow_sample(const CanvasMar<Scalar>& model, const Tensor<Scalar>& z, int steps, RngStream& rng) {
  return flow_integrate(model, z, gaussian<Scalar>(rng, z.rows(), model.config.token_dim()), steps);
}

#define CANVASMAR_INSTANTIATE_MODEL(S)                                                                                \
  template struct CanvasMar<S>;                                                                                       \
  template TemporalEmbedding<S> temporal_forward<S>(const CanvasMar<S>&, std::span<const TokenGrid>, KVCache<S>*);   \
  template std::vector<CanvasEmbedding<S>> canvas_forward<S>(const CanvasMar<S>&, const TemporalEmbedding<S>&,        \
                                                             const TokenGrid&, int);                                  \
  template TokenGrid canvas_project<S>(const CanvasMar<S>&, const CanvasEmbedding<S>&);                               \
  template Tensor<S> spatial_forward<S>(const CanvasMar<S>&, const TokenGrid&, std::span<const Index>,                \
                                        std::span<const Index>, const CanvasEmbedding<S>*, const TemporalEmbedding<S>&); \
  template Tensor<S> flow_velocity<S>(const CanvasMar<S>&, const Tensor<S>&, S, const Tensor<S>&);                    \
  template Matrix<S> flow_integrate<S>(const CanvasMar<S>&, const Tensor<S>&, Matrix<S>, int);                        \
  template Matrix<S> flow_sample<S>(const CanvasMar<S>&, const Tensor<S>&, int, RngStream&);

CANVASMAR_INSTANTIATE_MODEL(float)
CANVASMAR_INSTANTIATE_MODEL(double)

}  // namespace canvasmar
