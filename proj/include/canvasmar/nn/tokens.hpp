#pragma once

#include <span>
#include <vector>

#include "canvasmar/numerics/tensor.hpp"

namespace canvasmar {

struct FrameShape {
  int height = 0;
  int width = 0;
  int channels = 1;

  Index pixels() const { return static_cast<Index>(height) * width * channels; }
  bool operator==(const FrameShape&) const = default;
};

/// frames x height x width x channels, row-major, values in [0, 1].
class VideoTensor {
 public:
  VideoTensor() = default;
  VideoTensor(int frames, FrameShape shape);
  VideoTensor(int frames, FrameShape shape, std::vector<float> data);

  int frames() const { return frames_; }
  const FrameShape& frame_shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }

  float& at(int f, int y, int x, int c = 0) { return data_[offset(f, y, x, c)]; }
  float at(int f, int y, int x, int c = 0) const { return data_[offset(f, y, x, c)]; }

  std::span<float> frame(int f);
  std::span<const float> frame(int f) const;
  void append_frame(std::span<const float> pixels);
  /// Frames [begin, begin + count).
  VideoTensor slice(int begin, int count) const;

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool operator==(const VideoTensor&) const = default;

 private:
  std::size_t offset(int f, int y, int x, int c) const {
    return ((static_cast<std::size_t>(f) * shape_.height + y) * shape_.width + x) * shape_.channels + c;
  }
  int frames_ = 0;
  FrameShape shape_;
  std::vector<float> data_;
};

/// One frame as n raster-ordered patch tokens of width patch*patch*channels.
struct TokenGrid {
  MatrixF tokens;
  int frame_index = 0;

  Index count() const { return tokens.rows(); }
  Index dim() const { return tokens.cols(); }
};

/// Splits a frame into non-overlapping patches, raster order over patches and
/// (row, column, channel) order inside each patch.
TokenGrid patchify(std::span<const float> frame, const FrameShape& shape, int patch, int frame_index = 0);
std::vector<float> unpatchify(const MatrixF& tokens, const FrameShape& shape, int patch);

std::vector<TokenGrid> patchify_video(const VideoTensor& video, int patch);

}  // namespace canvasmar
