#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "canvasmar/generation/generation.hpp"

namespace canvasmar {

struct DropoutFlags {
  bool drop_spatial = false;
  bool drop_temporal = false;

  /// Probability p each for spatial only, temporal only, and both.
  static DropoutFlags draw(RngStream& rng, double p = 0.05);
  bool operator==(const DropoutFlags&) const = default;
};

/// Mean over tokens (rows) of the squared L2 distance.
template <typename Scalar>
Tensor<Scalar> canvas_loss(const Tensor<Scalar>& prediction, const Matrix<Scalar>& target);
double canvas_loss(const TokenGrid& prediction, const TokenGrid& target);

/// Mean over rows of |v(x_t, t | z) - (x1 - x0)|^2 with x_t = (1 - t) x0 + t x1,
/// x0 ~ N(0, I) and t ~ U(0, 1) drawn per row from rng.
template <typename Scalar>
Tensor<Scalar> flow_matching_loss(const FlowHead<Scalar>& head, const Matrix<Scalar>& x1, const Tensor<Scalar>& z,
                                  RngStream& rng);

/// Sorted masked positions: a uniformly random subset of size round(rho n),
/// rho ~ U(0.5, 1) unless given.
std::vector<Index> sample_mask_set(Index n, RngStream& rng, std::optional<double> ratio = std::nullopt);

/// Fixed-length clips. stream_ids key each clip's random draws.
struct TrainBatch {
  std::vector<VideoTensor> videos;
  std::vector<std::uint64_t> stream_ids;

  int frames() const { return videos.empty() ? 0 : videos.front().frames(); }
};

struct TrainConfig {
  AdamConfig adam;
  double canvas_weight = 1.0;
  double flow_weight = 1.0;
  double condition_dropout = 0.05;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  /// Frames predicted per temporal step.
  int group = 1;
};

enum class LossMode {
  /// One hybrid-masked temporal pass per clip covers every target frame.
  parallel,
  /// A separate temporal pass per target frame over its history only.
  sequential,
};

template <typename Scalar>
struct ItemLoss {
  int video = 0;
  int frame = 0;  // target frame index
  Tensor<Scalar> canvas;
  Tensor<Scalar> flow;
};

template <typename Scalar>
struct BatchLoss {
  Tensor<Scalar> total;   // weighted mean over items
  Tensor<Scalar> canvas;  // mean over items
  Tensor<Scalar> flow;    // mean over items
  std::vector<ItemLoss<Scalar>> items;
};

/// Losses for every (clip, target frame) pair. Both modes consume identical
/// random draws, keyed by (step_seed, stream id, frame).
template <typename Scalar>
BatchLoss<Scalar> compute_losses(const CanvasMar<Scalar>& model, const TrainBatch& batch, const TrainConfig& config,
                                 std::uint64_t step_seed, LossMode mode = LossMode::parallel);

struct StepMetrics {
  long step = 0;
  double canvas_loss = 0;
  double flow_loss = 0;
  double total_loss = 0;
  double grad_norm = 0;
  double learning_rate = 0;
};

/// One optimization step. Throws NumericError on a non-finite loss without
/// touching the parameters.
StepMetrics train_step(CanvasMar<float>& model, OptState<float>& opt, const TrainBatch& batch,
                       const TrainConfig& config, std::uint64_t seed);

/// Samples `batch_size` clips of `frames` frames from the dataset (random clip
/// and window start), keyed by (seed, step).
TrainBatch sample_batch(std::span<const VideoTensor> dataset, int batch_size, int frames, std::uint64_t seed,
                        long step);

// ---------------------------------------------------------------- checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  CanvasMar<float> model;
  OptState<float> opt;
};

void save_checkpoint(const std::string& path, const CanvasMar<float>& model, const OptState<float>& opt);
/// Rebuilds the model from the stored configuration.
Checkpoint load_checkpoint(const std::string& path);
/// Loads into an existing model; the stored configuration must equal
/// model.config, otherwise the error names the first differing field.
void load_checkpoint_into(const std::string& path, CanvasMar<float>& model, OptState<float>& opt);

}  // namespace canvasmar
