#include "canvasmar/nn/tokens.hpp"

#include <stdexcept>
#include <string>

namespace canvasmar {

VideoTensor::VideoTensor(int frames, FrameShape shape)
    : frames_(frames), shape_(shape), data_(static_cast<std::size_t>(frames) * shape.pixels(), 0.0f) {}

VideoTensor::VideoTensor(int frames, FrameShape shape, std::vector<float> data)
    : frames_(frames), shape_(shape), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(frames) * shape.pixels()) {
    throw std::invalid_argument("VideoTensor: data size does not match frames x H x W x C");
  }
}

std::span<float> VideoTensor::frame(int f) {
  if (f < 0 || f >= frames_) throw std::out_of_range("VideoTensor::frame: index out of range");
  return {data_.data() + static_cast<std::size_t>(f) * shape_.pixels(), static_cast<std::size_t>(shape_.pixels())};
}

std::span<const float> VideoTensor::frame(int f) const {
  if (f < 0 || f >= frames_) throw std::out_of_range("VideoTensor::frame: index out of range");
  return {data_.data() + static_cast<std::size_t>(f) * shape_.pixels(), static_cast<std::size_t>(shape_.pixels())};
}

void VideoTensor::append_frame(std::span<const float> pixels) {
  if (static_cast<Index>(pixels.size()) != shape_.pixels()) {
    throw std::invalid_argument("VideoTensor::append_frame: pixel count mismatch");
  }
  data_.insert(data_.end(), pixels.begin(), pixels.end());
  ++frames_;
}

VideoTensor VideoTensor::slice(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > frames_) throw std::out_of_range("VideoTensor::slice: out of range");
  const auto px = static_cast<std::size_t>(shape_.pixels());
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * px),
                         data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * px));
  return VideoTensor(count, shape_, std::move(out));
}

namespace {
void check_patch(const FrameShape& shape, int patch) {
  if (patch < 1 || shape.height % patch != 0 || shape.width % patch != 0) {
    throw std::invalid_argument("patch size " + std::to_string(patch) + " does not divide " +
                                std::to_string(shape.height) + "x" + std::to_string(shape.width));
  }
}
}  // namespace

TokenGrid patchify(std::span<const float> frame, const FrameShape& shape, int patch, int frame_index) {
  check_patch(shape, patch);
  if (static_cast<Index>(frame.size()) != shape.pixels()) throw std::invalid_argument("patchify: frame size mismatch");
  const int gh = shape.height / patch;
  const int gw = shape.width / patch;
  const int c = shape.channels;
  TokenGrid grid;
  grid.frame_index = frame_index;
  grid.tokens.resize(static_cast<Index>(gh) * gw, static_cast<Index>(patch) * patch * c);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const Index t = static_cast<Index>(py) * gw + px;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t src =
                (static_cast<std::size_t>(py * patch + dy) * shape.width + (px * patch + dx)) * c + ch;
            grid.tokens(t, (dy * patch + dx) * c + ch) = frame[src];
          }
    }
  return grid;
}

std::vector<float> unpatchify(const MatrixF& tokens, const FrameShape& shape, int patch) {
  check_patch(shape, patch);
  const int gh = shape.height / patch;
  const int gw = shape.width / patch;
  const int c = shape.channels;
  if (tokens.rows() != static_cast<Index>(gh) * gw || tokens.cols() != static_cast<Index>(patch) * patch * c) {
    throw std::invalid_argument("unpatchify: token grid does not match frame shape");
  }
  std::vector<float> frame(static_cast<std::size_t>(shape.pixels()));
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const Index t = static_cast<Index>(py) * gw + px;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t dst =
                (static_cast<std::size_t>(py * patch + dy) * shape.width + (px * patch + dx)) * c + ch;
            frame[dst] = tokens(t, (dy * patch + dx) * c + ch);
          }
    }
  return frame;
}

std::vector<TokenGrid> patchify_video(const VideoTensor& video, int patch) {
  std::vector<TokenGrid> out;
  out.reserve(static_cast<std::size_t>(video.frames()));
  for (int f = 0; f < video.frames(); ++f) out.push_back(patchify(video.frame(f), video.frame_shape(), patch, f));
  return out;
}

}  // namespace canvasmar
