#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canvasmar/generation/generation.hpp"

namespace canvasmar {

double mse(std::span<const float> a, std::span<const float> b);
/// Peak signal-to-noise ratio for pixels in [0, 1]; +inf for identical inputs.
double psnr(std::span<const float> a, std::span<const float> b);

/// Frozen random convolutional features of a clip of up to 16 frames: two
/// stride-2 3x3 conv + ReLU layers per frame, 2x2 average pooling of the
/// last map, then the per-clip mean and mean absolute frame-to-frame change.
class FeatureEmbedder {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x46454154ULL;
  static constexpr int kMaxFrames = 16;

  explicit FeatureEmbedder(FrameShape shape, std::uint64_t seed = kDefaultSeed);

  Index dim() const { return 2 * channels2_ * 4; }
  Eigen::VectorXd embed(const VideoTensor& clip) const;
  /// One row per clip.
  Eigen::MatrixXd embed_all(std::span<const VideoTensor> clips) const;

 private:
  struct Conv {
    int in = 0, out = 0;
    std::vector<double> weight;  // out x in x 3 x 3
    std::vector<double> bias;
  };
  std::vector<double> apply(const Conv& conv, const std::vector<double>& input, int h, int w) const;

  FrameShape shape_;
  int channels1_ = 8;
  int channels2_ = 8;
  Conv conv1_, conv2_;
};

/// |mu_r - mu_f|^2 + tr(S_r + S_f - 2 (S_r^1/2 S_f S_r^1/2)^1/2), rows are
/// samples; square roots via symmetric eigendecomposition with negative
/// eigenvalues clipped to 0.
double frechet_proxy(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake);

/// Symmetric PSD square root.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

class VideoPredictor {
 public:
  virtual ~VideoPredictor() = default;
  /// One clip per seed: truth frames [start, start + cond_frames) followed by
  /// num_new predicted frames.
  virtual std::vector<VideoTensor> predict(const VideoTensor& truth, int start, int cond_frames, int num_new,
                                           std::span<const std::uint64_t> seeds) const = 0;
};

/// Returns the ground-truth continuation.
class OracleReplayPredictor : public VideoPredictor {
 public:
  std::vector<VideoTensor> predict(const VideoTensor& truth, int start, int cond_frames, int num_new,
                                   std::span<const std::uint64_t> seeds) const override;
};

/// Uniform noise frames.
class NoisePredictor : public VideoPredictor {
 public:
  std::vector<VideoTensor> predict(const VideoTensor& truth, int start, int cond_frames, int num_new,
                                   std::span<const std::uint64_t> seeds) const override;
};

class CanvasMarPredictor : public VideoPredictor {
 public:
  CanvasMarPredictor(const CanvasMar<float>& model, RolloutConfig config, int max_batch = 16)
      : model_(model), config_(std::move(config)), max_batch_(max_batch) {}
  std::vector<VideoTensor> predict(const VideoTensor& truth, int start, int cond_frames, int num_new,
                                   std::span<const std::uint64_t> seeds) const override;

 private:
  const CanvasMar<float>& model_;
  RolloutConfig config_;
  int max_batch_;
};

struct EvalConfig {
  int test_clips = 64;
  /// Generated clips per conditioning clip (standard protocol).
  int samples_per_condition = 16;
  /// Random-window repeats (debiased protocol).
  int repeats = 16;
  int cond_frames = 2;
  /// Length of real and generated clips, conditioning frames included.
  int clip_frames = 8;
  std::uint64_t seed = 0;
};

struct EvalResult {
  std::string protocol;
  std::uint64_t seed = 0;
  double score = 0;
  double psnr = 0;  // mean over generated clips, generated frames only
  int real_count = 0;
  int fake_count = 0;
  /// Debiased protocol: conditioning window start per repeat and clip.
  std::vector<std::vector<int>> window_starts;
};

/// The first cond_frames of each test clip condition samples_per_condition
/// generated clips; the real set is each test clip's first clip_frames.
EvalResult eval_protocol_standard(const VideoPredictor& model, std::span<const VideoTensor> dataset,
                                  const EvalConfig& config, const FeatureEmbedder& embedder);

/// Per repeat, every test clip gets a freshly drawn window start; one clip is
/// generated per (repeat, test clip) and compared with the real window.
EvalResult eval_protocol_debiased(const VideoPredictor& model, std::span<const VideoTensor> dataset,
                                  const EvalConfig& config, const FeatureEmbedder& embedder);

/// 64-bit FNV-1a of a configuration text, as 16 hex digits.
std::string config_hash(const std::string& text);

/// One JSON object: protocol, seed, score, psnr, counts, config hash.
std::string metrics_json(const EvalResult& result, const std::string& hash);

}  // namespace canvasmar
