#include "canvasmar/model/config.hpp"

#include <charconv>
#include <utility>
#include <sstream>

namespace canvasmar {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("field '" + key + "': expected integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("field '" + key + "': expected true/false, got '" + text + "'");
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
  }
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("field '" + field + "': " + why); };
  if (height < 1) fail("height", "must be >= 1");
  if (width < 1) fail("width", "must be >= 1");
  if (channels < 1) fail("channels", "must be >= 1");
  if (patch < 1 || height % patch != 0 || width % patch != 0) fail("patch", "must divide height and width");
  if (dim < 2 || dim % 2 != 0) fail("dim", "must be even and >= 2");
  if (heads < 1 || dim % heads != 0) fail("heads", "must divide dim");
  if (mlp_ratio < 1) fail("mlp_ratio", "must be >= 1");
  if (temporal_layers < 1) fail("temporal_layers", "must be >= 1");
  if (canvas_layers < 1) fail("canvas_layers", "must be >= 1");
  if (spatial_layers < 1) fail("spatial_layers", "must be >= 1");
  if (spatial_encoder_depth < 0 || spatial_encoder_depth >= spatial_layers) {
    fail("spatial_encoder_depth", "must lie in [0, spatial_layers)");
  }
  if (flow_dim < 1) fail("flow_dim", "must be >= 1");
  if (flow_layers < 1) fail("flow_layers", "must be >= 1");
  if (flow_steps < 1) fail("flow_steps", "must be >= 1");
  if (group_size < 1) fail("group_size", "must be >= 1");
  if (max_frames < 2) fail("max_frames", "must be >= 2");
}

bool ModelConfig::is_field(const std::string& key) {
  bool found = false;
  ModelConfig probe;
  probe.for_each_field([&](const char* name, auto&) { found = found || key == name; });
  return found;
}

bool ModelConfig::set_field(const std::string& key, const std::string& value) {
  bool found = false;
  for_each_field([&](const char* name, auto& field) {
    if (key != name) return;
    found = true;
    if constexpr (std::is_same_v<std::decay_t<decltype(field)>, bool>) {
      field = parse_bool(key, value);
    } else {
      field = parse_int(key, value);
    }
  });
  return found;
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  for_each_field([&](const char* name, const auto& v) {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, bool>) {
      out << name << " = " << (v ? "true" : "false") << "\n";
    } else {
      out << name << " = " << v << "\n";
    }
  });
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig config;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!config.set_field(k, v)) throw ConfigError("unknown model config key '" + k + "'");
  }
  config.validate();
  return config;
}

std::string ModelConfig::first_difference(const ModelConfig& other) const {
  std::string diff;
  std::map<std::string, std::string> a, b;
  for_each_field([&](const char* name, const auto& v) { a[name] = std::to_string(v); });
  other.for_each_field([&](const char* name, const auto& v) { b[name] = std::to_string(v); });
  for_each_field([&](const char* name, const auto&) {
    if (diff.empty() && a[name] != b[name]) diff = name;
  });
  return diff;
}

}  // namespace canvasmar
