#include "canvasmar/cli/run_config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace canvasmar {
namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("field '" + key + "': cannot parse '" + text + "'");
  return v;
}

bool parse_flag(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("field '" + key + "': expected true/false, got '" + text + "'");
}

// Visits the non-model fields as (name, reference).
template <typename Config, typename F>
void for_each_run_field(Config& c, F&& f) {
  f("learning_rate", c.train.adam.learning_rate);
  f("beta1", c.train.adam.beta1);
  f("beta2", c.train.adam.beta2);
  f("adam_epsilon", c.train.adam.epsilon);
  f("warmup_steps", c.train.adam.warmup_steps);
  f("canvas_weight", c.train.canvas_weight);
  f("flow_weight", c.train.flow_weight);
  f("condition_dropout", c.train.condition_dropout);
  f("grad_clip", c.train.grad_clip);
  f("train_steps", c.train_steps);
  f("batch_size", c.batch_size);
  f("clip_frames", c.clip_frames);
  f("checkpoint_every", c.checkpoint_every);
  f("decode_steps", c.decode_steps);
  f("guidance", c.guidance);
  f("w_s", c.w_s);
  f("w_t", c.w_t);
  f("r", c.r);
  f("r_prime", c.r_prime);
  f("eval_test_clips", c.eval.test_clips);
  f("eval_samples_per_condition", c.eval.samples_per_condition);
  f("eval_repeats", c.eval.repeats);
  f("eval_cond_frames", c.eval.cond_frames);
  f("eval_clip_frames", c.eval.clip_frames);
  f("data_dir", c.data_dir);
  f("out_dir", c.out_dir);
}

template <typename T>
void assign(const std::string& key, const std::string& text, T& field) {
  if constexpr (std::is_same_v<T, bool>) {
    field = parse_flag(key, text);
  } else if constexpr (std::is_same_v<T, std::string>) {
    field = text;
  } else {
    field = parse_number<T>(key, text);
  }
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("field '" + field + "': " + why); };
  if (train.adam.learning_rate <= 0) fail("learning_rate", "must be > 0");
  if (train.adam.warmup_steps < 0) fail("warmup_steps", "must be >= 0");
  if (train.grad_clip < 0) fail("grad_clip", "must be >= 0");
  if (train.condition_dropout < 0 || train.condition_dropout > 1.0 / 3.0) fail("condition_dropout", "must lie in [0, 1/3]");
  if (train_steps < 0) fail("train_steps", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (clip_frames != 0 && (clip_frames < 2 || clip_frames > model.max_frames)) {
    fail("clip_frames", "must be 0 or lie in [2, max_frames]");
  }
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (decode_steps < 1 || decode_steps > model.tokens()) fail("decode_steps", "must lie in [1, tokens per frame]");
  if (w_s < 0) fail("w_s", "must be >= 0");
  if (w_t < 0) fail("w_t", "must be >= 0");
  try {
    AugmentConfig{r, r_prime, AugmentMode::inference}.validate();
  } catch (const std::invalid_argument& e) {
    fail("r", e.what());
  }
  if (eval.cond_frames < 1 || eval.clip_frames <= eval.cond_frames) fail("eval_clip_frames", "must exceed eval_cond_frames >= 1");
}

std::string RunConfig::to_text() const {
  std::string out = model.to_text();
  for_each_run_field(*this, [&](const char* name, const auto& v) { out += std::string(name) + " = " + show(v) + "\n"; });
  if (seed) out += "seed = " + std::to_string(*seed) + "\n";
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (ModelConfig::is_field(key)) {
      c.model.set_field(key, value);
      continue;
    }
    if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
      continue;
    }
    bool found = false;
    for_each_run_field(c, [&](const char* name, auto& field) {
      if (key == name) {
        assign(key, value, field);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  c.train.group = c.model.group_size;
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

RolloutConfig RunConfig::rollout_config() const {
  RolloutConfig rc;
  rc.decode.steps = decode_steps;
  if (guidance) rc.decode.guidance = GuidanceScales{w_s, w_t};
  rc.augment = AugmentConfig{r, r_prime, AugmentMode::inference};
  rc.group = model.group_size;
  return rc;
}

void train_loop(CanvasMar<float>& model, OptState<float>& opt, std::span<const VideoTensor> dataset,
                const TrainConfig& config, const TrainLoopOptions& options,
                const std::function<void(const StepMetrics&)>& on_step) {
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);
  auto save = [&] {
    if (options.checkpoint_dir.empty()) return;
    const std::filesystem::path dir(options.checkpoint_dir);
    save_checkpoint((dir / ("step_" + std::to_string(opt.step) + ".cmar")).string(), model, opt);
    save_checkpoint((dir / "latest.cmar").string(), model, opt);
  };
  bool saved_last = true;
  while (opt.step < options.steps) {
    const TrainBatch batch = sample_batch(dataset, options.batch_size, options.clip_frames, options.seed, opt.step);
    const StepMetrics m = train_step(model, opt, batch, config, options.seed);
    saved_last = false;
    if (on_step) on_step(m);
    if (options.checkpoint_every > 0 && opt.step % options.checkpoint_every == 0) {
      save();
      saved_last = true;
    }
  }
  if (!saved_last) save();
}

}  // namespace canvasmar
