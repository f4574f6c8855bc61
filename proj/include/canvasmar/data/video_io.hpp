#pragma once

#include <string>

#include "canvasmar/nn/tokens.hpp"

namespace canvasmar {

class VideoFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "CMV1", u32 frames/height/width/channels, then f32 pixels, little-endian.
void write_video(const std::string& path, const VideoTensor& video);
VideoTensor read_video(const std::string& path);

/// Binary PGM (one channel) or PPM (three channels) of one frame; values are
/// clamped to [0, 1] and scaled to 0..255.
void write_frame_image(const std::string& path, const VideoTensor& video, int frame);

}  // namespace canvasmar
