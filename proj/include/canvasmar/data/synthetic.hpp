#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "canvasmar/nn/tokens.hpp"

namespace canvasmar {

enum class DatasetKind { bouncing, coinflip };

std::string to_string(DatasetKind kind);
/// Throws std::invalid_argument for unknown names.
DatasetKind parse_dataset_kind(const std::string& name);

struct SyntheticSpec {
  DatasetKind kind = DatasetKind::bouncing;
  int clips = 64;
  int frames = 8;
  int height = 32;
  int width = 32;
  int channels = 1;
  int shapes = 1;
  /// Half-extent of every shape in pixels (circle radius, square half side).
  double size = 4.0;
  /// Speed range in pixels per frame; coinflip uses max_speed.
  double min_speed = 1.0;
  double max_speed = 2.0;
  std::uint64_t seed = 0;

  FrameShape frame_shape() const { return {height, width, channels}; }
};

struct MovingShape {
  bool square = false;
  double x = 0, y = 0;    // center, pixels
  double vx = 0, vy = 0;  // pixels per frame
  double size = 4.0;
  std::vector<float> color{1.0f};  // one value per channel
};

/// Hard-edged rendering of shapes on a zero background.
void render_shapes(std::span<const MovingShape> shapes, const FrameShape& shape, std::span<float> frame);

/// Integrates constant-velocity motion with elastic reflection at the walls.
/// Throws when a shape does not fit inside the frame.
VideoTensor simulate_bouncing(std::vector<MovingShape> shapes, int frames, const FrameShape& shape);

std::vector<VideoTensor> gen_bouncing(const SyntheticSpec& spec);

/// Every clip starts from the same centered shape; from the second frame on
/// it moves left or right (one fair draw per clip) at max_speed.
std::vector<VideoTensor> gen_coinflip(const SyntheticSpec& spec);
/// Second frame of the left-moving (first) and right-moving (second) outcome.
std::pair<std::vector<float>, std::vector<float>> coinflip_outcomes(const SyntheticSpec& spec);
/// Generates the dataset the spec describes.
std::vector<VideoTensor> generate_dataset(const SyntheticSpec& spec);

/// Spec as `key = value` text and back; unknown keys are errors.
std::string spec_to_text(const SyntheticSpec& spec);
SyntheticSpec spec_from_text(const std::string& text);

/// Writes `clip_NNNNN.cmv` files plus `manifest.txt` (spec, seed, clip count).
void save_dataset(const std::string& dir, const SyntheticSpec& spec, std::span<const VideoTensor> clips);
/// Reads every clip listed by the manifest. Throws VideoFileError when the
/// directory, manifest or a clip is missing.
std::vector<VideoTensor> load_dataset(const std::string& dir, SyntheticSpec* spec = nullptr);

/// +1 for a right-moving clip, -1 for left, from the shape's displacement.
int coinflip_direction(const VideoTensor& clip);

}  // namespace canvasmar
