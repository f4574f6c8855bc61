#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "canvasmar/training/training.hpp"

namespace canvasmar {
namespace {

constexpr char kMagic[4] = {'C', 'M', 'A', 'R'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const MatrixF& m) {
    str(name);
    u32(2);
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) u32(std::bit_cast<std::uint32_t>(m.data()[i]));
  }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : buf_(std::move(data)), path_(std::move(path)) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size()) {
      throw CheckpointError("truncated checkpoint " + path_ + ": missing " + what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  MatrixF tensor(std::string& name) {
    name = str("tensor name");
    const std::uint32_t rank = u32("tensor rank");
    if (rank != 2) throw CheckpointError("checkpoint tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    const std::uint32_t rows = u32("tensor dims");
    const std::uint32_t cols = u32("tensor dims");
    need(static_cast<std::size_t>(rows) * cols * 4, "tensor payload");
    MatrixF m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(u32("tensor payload"));
    return m;
  }
  void magic() {
    need(4, "magic");
    if (std::memcmp(buf_.data(), kMagic, 4) != 0) throw CheckpointError("bad magic in " + path_ + ": not a CMAR checkpoint");
    pos_ = 4;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Stored {
  ModelConfig config;
  std::uint64_t seed = 0;
  long step = 0;
  std::map<std::string, MatrixF> tensors;
};

Stored read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path);
  r.magic();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Stored s;
  try {
    s.config = ModelConfig::from_text(r.str("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  s.seed = r.u64("seed");
  s.step = static_cast<long>(r.u64("step"));
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    MatrixF m = r.tensor(name);
    if (!s.tensors.emplace(name, std::move(m)).second) throw CheckpointError("duplicate checkpoint tensor '" + name + "'");
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint records in " + path);
  return s;
}

void assign(const Stored& s, CanvasMar<float>& model, OptState<float>& opt) {
  ParamList<float> params = model.parameters();
  auto take = [&](const std::string& name, Index rows, Index cols) -> const MatrixF& {
    auto it = s.tensors.find(name);
    if (it == s.tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    return it->second;
  };
  std::size_t expected = 0;
  opt = OptState<float>::zeros_like(params, opt.config);
  opt.step = s.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    t.mutable_value() = take(name, t.rows(), t.cols());
    opt.first_moment[i] = take("adam.m." + name, t.rows(), t.cols());
    opt.second_moment[i] = take("adam.v." + name, t.rows(), t.cols());
    expected += 3;
  }
  if (s.tensors.size() != expected) throw CheckpointError("checkpoint holds tensors unknown to this model");
}

}  // namespace

void save_checkpoint(const std::string& path, const CanvasMar<float>& model, const OptState<float>& opt) {
  const ParamList<float> params = model.parameters();
  if (opt.first_moment.size() != params.size() || opt.second_moment.size() != params.size()) {
    throw CheckpointError("optimizer state does not match the model");
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(model.config.to_text());
  w.u64(model.seed);
  w.u64(static_cast<std::uint64_t>(opt.step));
  w.u32(static_cast<std::uint32_t>(params.size() * 3));
  for (const auto& [name, t] : params) w.tensor(name, t.value());
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.m." + params[i].first, opt.first_moment[i]);
  for (std::size_t i = 0; i < params.size(); ++i) w.tensor("adam.v." + params[i].first, opt.second_moment[i]);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const Stored s = read_file(path);
  Checkpoint c{CanvasMar<float>(s.config, s.seed), {}};
  assign(s, c.model, c.opt);
  return c;
}

void load_checkpoint_into(const std::string& path, CanvasMar<float>& model, OptState<float>& opt) {
  const Stored s = read_file(path);
  if (const std::string diff = s.config.first_difference(model.config); !diff.empty()) {
    throw CheckpointError("checkpoint config mismatch in field '" + diff + "'");
  }
  assign(s, model, opt);
}

}  // namespace canvasmar
