#include "canvasmar/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <numbers>
#include <stdexcept>

#include "canvasmar/data/video_io.hpp"
#include "canvasmar/model/config.hpp"
#include "canvasmar/numerics/rng.hpp"

namespace canvasmar {

std::string to_string(DatasetKind kind) { return kind == DatasetKind::bouncing ? "bouncing" : "coinflip"; }

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "bouncing") return DatasetKind::bouncing;
  if (name == "coinflip") return DatasetKind::coinflip;
  throw std::invalid_argument("unknown dataset kind '" + name + "' (expected bouncing or coinflip)");
}

void render_shapes(std::span<const MovingShape> shapes, const FrameShape& shape, std::span<float> frame) {
  std::fill(frame.begin(), frame.end(), 0.0f);
  for (const auto& s : shapes) {
    const int y0 = std::max(0, static_cast<int>(std::floor(s.y - s.size)));
    const int y1 = std::min(shape.height - 1, static_cast<int>(std::ceil(s.y + s.size)));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.x - s.size)));
    const int x1 = std::min(shape.width - 1, static_cast<int>(std::ceil(s.x + s.size)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - s.x, dy = y + 0.5 - s.y;
        const bool inside = s.square ? (std::abs(dx) <= s.size && std::abs(dy) <= s.size)
                                     : (dx * dx + dy * dy <= s.size * s.size);
        if (!inside) continue;
        for (int c = 0; c < shape.channels; ++c) {
          const float v = s.color[static_cast<std::size_t>(c) % s.color.size()];
          float& p = frame[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c];
          p = std::max(p, v);
        }
      }
    }
  }
}

VideoTensor simulate_bouncing(std::vector<MovingShape> shapes, int frames, const FrameShape& shape) {
  for (const auto& s : shapes) {
    if (2 * s.size > shape.width || 2 * s.size > shape.height) {
      throw std::invalid_argument("shape of size " + std::to_string(s.size) + " does not fit a " +
                                  std::to_string(shape.width) + "x" + std::to_string(shape.height) + " frame");
    }
  }
  VideoTensor video(frames, shape);
  auto reflect = [](double& p, double& v, double lo, double hi) {
    for (int guard = 0; guard < 8 && (p < lo || p > hi); ++guard) {
      if (p < lo) {
        p = 2 * lo - p;
        v = -v;
      } else if (p > hi) {
        p = 2 * hi - p;
        v = -v;
      }
    }
  };
  for (int f = 0; f < frames; ++f) {
    render_shapes(shapes, shape, video.frame(f));
    for (auto& s : shapes) {
      s.x += s.vx;
      s.y += s.vy;
      reflect(s.x, s.vx, s.size, shape.width - s.size);
      reflect(s.y, s.vy, s.size, shape.height - s.size);
    }
  }
  return video;
}

std::vector<VideoTensor> gen_bouncing(const SyntheticSpec& spec) {
  if (spec.clips < 1 || spec.frames < 1 || spec.shapes < 1) throw std::invalid_argument("gen_bouncing: empty spec");
  std::vector<VideoTensor> out;
  for (int clip = 0; clip < spec.clips; ++clip) {
    RngStream rng = RngStream::derive(spec.seed, {0x626f756eULL, static_cast<std::uint64_t>(clip)});
    std::vector<MovingShape> shapes;
    for (int k = 0; k < spec.shapes; ++k) {
      MovingShape s;
      s.square = rng.uniform() < 0.5;
      s.size = spec.size;
      s.x = rng.uniform(spec.size, std::max(spec.size, spec.width - spec.size));
      s.y = rng.uniform(spec.size, std::max(spec.size, spec.height - spec.size));
      const double angle = rng.uniform(0.0, 2 * std::numbers::pi);
      const double speed = rng.uniform(spec.min_speed, spec.max_speed);
      s.vx = speed * std::cos(angle);
      s.vy = speed * std::sin(angle);
      s.color.clear();
      for (int c = 0; c < spec.channels; ++c) s.color.push_back(spec.channels == 1 ? 1.0f : static_cast<float>(rng.uniform(0.3, 1.0)));
      shapes.push_back(std::move(s));
    }
    out.push_back(simulate_bouncing(std::move(shapes), spec.frames, spec.frame_shape()));
  }
  return out;
}

namespace {

VideoTensor coinflip_clip(const SyntheticSpec& spec, int direction) {
  MovingShape s;
  s.square = true;
  s.size = spec.size;
  s.x = spec.width / 2.0;
  s.y = spec.height / 2.0;
  s.color.assign(static_cast<std::size_t>(spec.channels), 1.0f);
  if (2 * s.size > spec.width || 2 * s.size > spec.height) throw std::invalid_argument("gen_coinflip: shape does not fit");
  VideoTensor video(spec.frames, spec.frame_shape());
  for (int f = 0; f < spec.frames; ++f) {
    MovingShape at = s;
    at.x = s.x + direction * spec.max_speed * f;
    render_shapes(std::span<const MovingShape>(&at, 1), spec.frame_shape(), video.frame(f));
  }
  return video;
}

}  // namespace

std::vector<VideoTensor> gen_coinflip(const SyntheticSpec& spec) {
  if (spec.clips < 1 || spec.frames < 1) throw std::invalid_argument("gen_coinflip: empty spec");
  std::vector<VideoTensor> out;
  const VideoTensor left = coinflip_clip(spec, -1), right = coinflip_clip(spec, +1);
  for (int clip = 0; clip < spec.clips; ++clip) {
    RngStream rng = RngStream::derive(spec.seed, {0x636f696eULL, static_cast<std::uint64_t>(clip)});
    out.push_back(rng.uniform() < 0.5 ? left : right);
  }
  return out;
}

std::pair<std::vector<float>, std::vector<float>> coinflip_outcomes(const SyntheticSpec& spec) {
  SyntheticSpec two = spec;
  two.frames = 2;
  const VideoTensor left = coinflip_clip(two, -1), right = coinflip_clip(two, +1);
  const auto a = left.frame(1), b = right.frame(1);
  return {std::vector<float>(a.begin(), a.end()), std::vector<float>(b.begin(), b.end())};
}

int coinflip_direction(const VideoTensor& clip) {
  if (clip.frames() < 2) throw std::invalid_argument("coinflip_direction: need two frames");
  auto centroid_x = [&](int f) {
    double mass = 0, mx = 0;
    for (int y = 0; y < clip.height(); ++y)
      for (int x = 0; x < clip.width(); ++x) {
        mass += clip.at(f, y, x);
        mx += clip.at(f, y, x) * x;
      }
    return mass > 0 ? mx / mass : 0.0;
  };
  return centroid_x(1) > centroid_x(0) ? 1 : -1;
}

}  // namespace canvasmar

// ---------------------------------------------------------------- dataset files

namespace canvasmar {

std::vector<VideoTensor> generate_dataset(const SyntheticSpec& spec) {
  return spec.kind == DatasetKind::bouncing ? gen_bouncing(spec) : gen_coinflip(spec);
}

std::string spec_to_text(const SyntheticSpec& s) {
  std::ostringstream out;
  out.precision(17);
  out << "kind = " << to_string(s.kind) << "\nclips = " << s.clips << "\nframes = " << s.frames
      << "\nheight = " << s.height << "\nwidth = " << s.width << "\nchannels = " << s.channels
      << "\nshapes = " << s.shapes << "\nsize = " << s.size << "\nmin_speed = " << s.min_speed
      << "\nmax_speed = " << s.max_speed << "\nseed = " << s.seed << "\n";
  return out.str();
}

SyntheticSpec spec_from_text(const std::string& text) {
  SyntheticSpec s;
  for (const auto& [key, value] : parse_key_values(text)) {
    try {
      if (key == "kind") s.kind = parse_dataset_kind(value);
      else if (key == "clips") s.clips = std::stoi(value);
      else if (key == "frames") s.frames = std::stoi(value);
      else if (key == "height") s.height = std::stoi(value);
      else if (key == "width") s.width = std::stoi(value);
      else if (key == "channels") s.channels = std::stoi(value);
      else if (key == "shapes") s.shapes = std::stoi(value);
      else if (key == "size") s.size = std::stod(value);
      else if (key == "min_speed") s.min_speed = std::stod(value);
      else if (key == "max_speed") s.max_speed = std::stod(value);
      else if (key == "seed") s.seed = std::stoull(value);
      else throw ConfigError("unknown manifest key '" + key + "'");
    } catch (const std::logic_error& e) {
      throw ConfigError("manifest key '" + key + "': cannot parse '" + value + "'");
    }
  }
  return s;
}

namespace {
std::string clip_path(const std::filesystem::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "clip_%05zu.cmv", i);
  return (dir / name).string();
}
}  // namespace

void save_dataset(const std::string& dir, const SyntheticSpec& spec, std::span<const VideoTensor> clips) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw VideoFileError("cannot create dataset directory " + dir + ": " + ec.message());
  for (std::size_t i = 0; i < clips.size(); ++i) write_video(clip_path(dir, i), clips[i]);
  SyntheticSpec recorded = spec;
  recorded.clips = static_cast<int>(clips.size());
  std::ofstream f(std::filesystem::path(dir) / "manifest.txt", std::ios::trunc);
  if (!f) throw VideoFileError("cannot write manifest in " + dir);
  f << spec_to_text(recorded);
  if (!f) throw VideoFileError("failed writing manifest in " + dir);
}

std::vector<VideoTensor> load_dataset(const std::string& dir, SyntheticSpec* spec) {
  const std::filesystem::path manifest = std::filesystem::path(dir) / "manifest.txt";
  std::ifstream f(manifest);
  if (!f) throw VideoFileError("dataset not found: no manifest at " + manifest.string());
  std::stringstream buf;
  buf << f.rdbuf();
  const SyntheticSpec s = spec_from_text(buf.str());
  std::vector<VideoTensor> clips;
  for (int i = 0; i < s.clips; ++i) clips.push_back(read_video(clip_path(dir, static_cast<std::size_t>(i))));
  if (spec) *spec = s;
  return clips;
}

}  // namespace canvasmar
