#include "canvasmar/data/video_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace canvasmar {
namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

void write_video(const std::string& path, const VideoTensor& video) {
  std::vector<char> out{'C', 'M', 'V', '1'};
  put_u32(out, static_cast<std::uint32_t>(video.frames()));
  put_u32(out, static_cast<std::uint32_t>(video.height()));
  put_u32(out, static_cast<std::uint32_t>(video.width()));
  put_u32(out, static_cast<std::uint32_t>(video.channels()));
  for (float v : video.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw VideoFileError("cannot write video " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw VideoFileError("failed writing video " + path);
}

VideoTensor read_video(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw VideoFileError("cannot open video " + path);
  const std::vector<char> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 20) throw VideoFileError("truncated video header in " + path);
  if (std::memcmp(in.data(), "CMV1", 4) != 0) throw VideoFileError("bad magic in " + path + ": not a CMV1 video");
  const std::uint32_t n = get_u32(in, 4), h = get_u32(in, 8), w = get_u32(in, 12), c = get_u32(in, 16);
  const std::size_t count = static_cast<std::size_t>(n) * h * w * c;
  if (in.size() != 20 + 4 * count) throw VideoFileError("video payload size mismatch in " + path);
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(in, 20 + 4 * i));
  return VideoTensor(static_cast<int>(n), {static_cast<int>(h), static_cast<int>(w), static_cast<int>(c)}, std::move(data));
}

void write_frame_image(const std::string& path, const VideoTensor& video, int frame) {
  if (video.channels() != 1 && video.channels() != 3) {
    throw VideoFileError("image dumps need 1 or 3 channels, got " + std::to_string(video.channels()));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw VideoFileError("cannot write image " + path);
  f << (video.channels() == 1 ? "P5" : "P6") << "\n" << video.width() << " " << video.height() << "\n255\n";
  for (float v : video.frame(frame)) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    f.put(static_cast<char>(byte));
  }
  if (!f) throw VideoFileError("failed writing image " + path);
}

}  // namespace canvasmar
