#pragma once

#include <map>
#include <string>
#include <utility>

#include "canvasmar/nn/tokens.hpp"

namespace canvasmar {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text, one pair per line, `#` starts a comment.
/// Duplicate keys are errors.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Network shapes. Layout mirrors the usual per-subnet "dim / layers / patch"
/// table, with a single width shared by the three transformers.
struct ModelConfig {
  int height = 32;
  int width = 32;
  int channels = 1;
  int patch = 4;
  int dim = 128;
  int heads = 4;
  int mlp_ratio = 4;
  int temporal_layers = 2;
  int canvas_layers = 1;
  int spatial_layers = 2;
  int spatial_encoder_depth = 1;
  int flow_dim = 256;
  int flow_layers = 2;
  int flow_steps = 30;
  int group_size = 1;
  int max_frames = 8;
  bool use_canvas = true;
  /// Whether the canvas loss back-propagates through the temporal embedding.
  bool canvas_grad_to_temporal = true;

  FrameShape frame_shape() const { return {height, width, channels}; }
  Index tokens() const { return static_cast<Index>(height / patch) * (width / patch); }
  Index token_dim() const { return static_cast<Index>(patch) * patch * channels; }

  /// Throws ConfigError naming the first inconsistent field.
  void validate() const;

  /// Visits (name, field) pairs; fields are int& or bool&.
  template <typename F>
  void for_each_field(F&& f) {
    f("height", height);
    f("width", width);
    f("channels", channels);
    f("patch", patch);
    f("dim", dim);
    f("heads", heads);
    f("mlp_ratio", mlp_ratio);
    f("temporal_layers", temporal_layers);
    f("canvas_layers", canvas_layers);
    f("spatial_layers", spatial_layers);
    f("spatial_encoder_depth", spatial_encoder_depth);
    f("flow_dim", flow_dim);
    f("flow_layers", flow_layers);
    f("flow_steps", flow_steps);
    f("group_size", group_size);
    f("max_frames", max_frames);
    f("use_canvas", use_canvas);
    f("canvas_grad_to_temporal", canvas_grad_to_temporal);
  }
  template <typename F>
  void for_each_field(F&& f) const {
    const_cast<ModelConfig*>(this)->for_each_field([&](const char* name, auto& v) { f(name, std::as_const(v)); });
  }

  static bool is_field(const std::string& key);
  /// Sets one field from text; returns false for unknown keys.
  bool set_field(const std::string& key, const std::string& value);

  std::string to_text() const;
  /// Unknown keys are errors.
  static ModelConfig from_text(const std::string& text);

  /// Name of the first field that differs, or empty.
  std::string first_difference(const ModelConfig& other) const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace canvasmar
