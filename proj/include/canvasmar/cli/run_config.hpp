#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "canvasmar/data/eval.hpp"
#include "canvasmar/training/training.hpp"

namespace canvasmar {

/// Everything a train / sample / eval run needs, as flat `key = value` text.
/// Model keys are the ModelConfig field names; unknown keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // training loop
  long train_steps = 1000;
  int batch_size = 8;
  /// Frames per training clip; 0 means model.max_frames.
  int clip_frames = 0;
  long checkpoint_every = 100;

  // sampling
  int decode_steps = kPresetSixSteps.steps;
  bool guidance = true;
  double w_s = kPresetSixSteps.scales.w_s;
  double w_t = kPresetSixSteps.scales.w_t;
  double r = 0.4;
  double r_prime = 0.4;

  // evaluation
  EvalConfig eval;

  std::optional<std::uint64_t> seed;
  std::string data_dir;
  std::string out_dir;

  /// Throws ConfigError naming the first bad field.
  void validate() const;
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);

  int effective_clip_frames() const { return clip_frames > 0 ? clip_frames : model.max_frames; }
  RolloutConfig rollout_config() const;
};

struct TrainLoopOptions {
  long steps = 0;  // train until opt.step reaches this
  int batch_size = 8;
  int clip_frames = 8;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  std::string checkpoint_dir;  // empty: no checkpoints
  std::uint64_t seed = 0;
};

/// Runs train_step until opt.step == options.steps, resuming from the
/// current step. Checkpoints go to `<dir>/step_<n>.cmar` and `<dir>/latest.cmar`.
/// A non-finite loss propagates NumericError; checkpoints already written are
/// left untouched.
void train_loop(CanvasMar<float>& model, OptState<float>& opt, std::span<const VideoTensor> dataset,
                const TrainConfig& config, const TrainLoopOptions& options,
                const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace canvasmar
