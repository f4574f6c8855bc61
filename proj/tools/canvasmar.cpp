// canvasmar: dataset generation, training, sampling, evaluation and
// throughput benchmarks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "canvasmar/cli/run_config.hpp"
#include "canvasmar/data/synthetic.hpp"
#include "canvasmar/data/video_io.hpp"

namespace fs = std::filesystem;
using namespace canvasmar;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed = " << s << " (drawn from entropy)\n";
  return s;
}

std::string numbered(const std::string& prefix, const char* tag, int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%s_%03d.%s", tag, i, ext);
  return prefix + buf;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string kind = "bouncing";
  std::string out;
  SyntheticSpec spec;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(GenDataArgs& a) {
  try {
    a.spec.kind = parse_dataset_kind(a.kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  a.spec.seed = resolve_seed(a.seed);
  const std::vector<VideoTensor> clips = generate_dataset(a.spec);
  save_dataset(a.out, a.spec, clips);
  std::cout << "wrote " << clips.size() << " " << a.kind << " clips to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<std::uint64_t> seed;
  long steps = -1;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = RunConfig::from_file(a.config);
  if (!a.data.empty()) rc.data_dir = a.data;
  if (!a.out.empty()) rc.out_dir = a.out;
  if (a.seed) rc.seed = a.seed;
  if (a.steps >= 0) rc.train_steps = a.steps;
  if (rc.data_dir.empty()) throw UsageError("no dataset: set data_dir in the config or pass --data");
  if (rc.out_dir.empty()) throw UsageError("no output directory: set out_dir in the config or pass --out");
  const std::uint64_t seed = resolve_seed(rc.seed);
  rc.seed = seed;

  const std::vector<VideoTensor> dataset = load_dataset(rc.data_dir);
  if (dataset.empty()) throw std::runtime_error("dataset " + rc.data_dir + " has no clips");
  if (!(dataset.front().frame_shape() == rc.model.frame_shape())) {
    throw std::runtime_error("dataset resolution does not match the model config");
  }

  CanvasMar<float> model(rc.model, RngStream::derive(seed, {0x6d6f64ULL}).next_u64());
  OptState<float> opt = OptState<float>::zeros_like(model.parameters(), rc.train.adam);
  if (!a.resume.empty()) {
    load_checkpoint_into(a.resume, model, opt);
    opt.config = rc.train.adam;
    std::cout << "resumed from " << a.resume << " at step " << opt.step << "\n";
  }

  fs::create_directories(rc.out_dir);
  {
    std::ofstream f(fs::path(rc.out_dir) / "run_config.txt", std::ios::trunc);
    f << rc.to_text();
  }
  std::ofstream log(fs::path(rc.out_dir) / "metrics.log", std::ios::app);
  TrainLoopOptions lo;
  lo.steps = rc.train_steps;
  lo.batch_size = rc.batch_size;
  lo.clip_frames = rc.effective_clip_frames();
  lo.checkpoint_every = rc.checkpoint_every;
  lo.checkpoint_dir = rc.out_dir;
  lo.seed = seed;
  try {
    train_loop(model, opt, dataset, rc.train, lo, [&](const StepMetrics& m) {
      std::ostringstream line;
      line << "step=" << m.step << " canvas_loss=" << m.canvas_loss << " flow_loss=" << m.flow_loss
           << " total_loss=" << m.total_loss << " grad_norm=" << m.grad_norm << " lr=" << m.learning_rate;
      std::cout << line.str() << "\n";
      log << line.str() << "\n";
      log.flush();
    });
  } catch (const NumericError& e) {
    std::cerr << "training aborted at step " << opt.step + 1 << ": " << e.what()
              << "; last good checkpoint: " << (fs::path(rc.out_dir) / "latest.cmar").string() << "\n";
    return 2;
  }
  std::cout << "trained to step " << opt.step << "; checkpoint " << (fs::path(rc.out_dir) / "latest.cmar").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string checkpoint;
  std::string cond;
  std::string out;
  int cond_frames = 1;
  int frames = 1;
  int steps = kPresetSixSteps.steps;
  double ws = kPresetSixSteps.scales.w_s;
  double wt = kPresetSixSteps.scales.w_t;
  bool no_guidance = false;
  double r = 0.4;
  double r_prime = 0.4;
  int group = 0;
  bool dump_canvas = false;
  std::optional<std::uint64_t> seed;
};

int cmd_sample(const SampleArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const VideoTensor source = read_video(a.cond);
  if (!(source.frame_shape() == ck.model.config.frame_shape())) {
    throw std::runtime_error("conditioning video is " + std::to_string(source.width()) + "x" +
                             std::to_string(source.height()) + "x" + std::to_string(source.channels()) +
                             " but the checkpoint expects " + std::to_string(ck.model.config.width) + "x" +
                             std::to_string(ck.model.config.height) + "x" + std::to_string(ck.model.config.channels));
  }
  if (a.cond_frames < 1 || a.cond_frames > source.frames()) {
    throw UsageError("--cond-frames must lie in [1, " + std::to_string(source.frames()) + "]");
  }
  const int group = a.group > 0 ? a.group : ck.model.config.group_size;
  if (group > ck.model.config.group_size) {
    throw std::runtime_error("checkpoint supports group sizes up to " + std::to_string(ck.model.config.group_size) +
                             ", requested " + std::to_string(group));
  }
  if (a.steps < 1 || a.steps > ck.model.config.tokens()) {
    throw UsageError("--steps must lie in [1, " + std::to_string(ck.model.config.tokens()) + "]");
  }
  RolloutConfig rc;
  rc.decode.steps = a.steps;
  if (!a.no_guidance) rc.decode.guidance = GuidanceScales{a.ws, a.wt};
  rc.augment = AugmentConfig{a.r, a.r_prime, AugmentMode::inference};
  try {
    rc.augment.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  rc.group = group;
  const std::uint64_t seed = resolve_seed(a.seed);
  const RolloutResult result = rollout(ck.model, source.slice(0, a.cond_frames), a.frames, rc, seed);

  write_video(a.out + ".cmv", result.video);
  const char* ext = result.video.channels() == 1 ? "pgm" : "ppm";
  const bool images = result.video.channels() == 1 || result.video.channels() == 3;
  if (images) {
    for (int f = 0; f < result.video.frames(); ++f) write_frame_image(numbered(a.out, "frame", f, ext), result.video, f);
  }
  if (a.dump_canvas) {
    write_video(a.out + "_canvas.cmv", result.canvases);
    if (images) {
      for (int f = 0; f < result.canvases.frames(); ++f) {
        write_frame_image(numbered(a.out, "canvas", a.cond_frames + f, ext), result.canvases, f);
      }
    }
  }
  std::cout << "wrote " << a.out << ".cmv (" << result.video.frames() << " frames)\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string protocol = "both";
  std::string model = "canvasmar";
  std::string out;
  std::string config;
  EvalConfig eval;
  std::optional<std::uint64_t> seed;
};

int cmd_eval(EvalArgs& a) {
  if (a.protocol != "standard" && a.protocol != "debiased" && a.protocol != "both") {
    throw UsageError("--protocol must be standard, debiased or both");
  }
  if (a.model != "canvasmar" && a.model != "oracle" && a.model != "noise") {
    throw UsageError("--model must be canvasmar, oracle or noise");
  }
  const std::vector<VideoTensor> dataset = load_dataset(a.data);
  if (dataset.empty()) throw std::runtime_error("dataset " + a.data + " has no clips");
  a.eval.seed = resolve_seed(a.seed);

  RolloutConfig rollout_config;
  std::string hashed_text = "model = " + a.model + "\n";
  std::unique_ptr<Checkpoint> ck;
  std::unique_ptr<VideoPredictor> predictor;
  if (a.model == "canvasmar") {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required for --model canvasmar");
    ck = std::make_unique<Checkpoint>(load_checkpoint(a.checkpoint));
    if (!(dataset.front().frame_shape() == ck->model.config.frame_shape())) {
      throw std::runtime_error("dataset resolution does not match the checkpoint");
    }
    if (!a.config.empty()) {
      const RunConfig rc = RunConfig::from_file(a.config);
      rollout_config = rc.rollout_config();
      rollout_config.group = std::min(rollout_config.group, ck->model.config.group_size);
    } else {
      rollout_config.decode.guidance = kPresetSixSteps.scales;
      rollout_config.group = ck->model.config.group_size;
    }
    hashed_text += ck->model.config.to_text();
    predictor = std::make_unique<CanvasMarPredictor>(ck->model, rollout_config);
  } else if (a.model == "oracle") {
    predictor = std::make_unique<OracleReplayPredictor>();
  } else {
    predictor = std::make_unique<NoisePredictor>();
  }
  std::ostringstream eval_text;
  eval_text << "test_clips = " << a.eval.test_clips << "\nsamples = " << a.eval.samples_per_condition
            << "\nrepeats = " << a.eval.repeats << "\ncond_frames = " << a.eval.cond_frames
            << "\nclip_frames = " << a.eval.clip_frames << "\ndecode_steps = " << rollout_config.decode.steps
            << "\nguidance = " << (rollout_config.decode.guidance ? 1 : 0) << "\n";
  if (rollout_config.decode.guidance) {
    eval_text << "w_s = " << rollout_config.decode.guidance->w_s << "\nw_t = " << rollout_config.decode.guidance->w_t
              << "\n";
  }
  const std::string hash = config_hash(hashed_text + eval_text.str());

  const FeatureEmbedder embedder(dataset.front().frame_shape());
  std::vector<std::string> records;
  if (a.protocol != "debiased") {
    records.push_back(metrics_json(eval_protocol_standard(*predictor, dataset, a.eval, embedder), hash));
  }
  if (a.protocol != "standard") {
    records.push_back(metrics_json(eval_protocol_debiased(*predictor, dataset, a.eval, embedder), hash));
  }
  std::ofstream out;
  if (!a.out.empty()) {
    out.open(a.out, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + a.out);
  }
  for (const auto& r : records) {
    std::cout << r << "\n";
    if (out.is_open()) out << r << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string checkpoint;
  std::vector<int> groups{1};
  std::vector<int> batches{1};
  int frames = 4;
  int runs = 5;
  int steps = kPresetSixSteps.steps;
  bool guidance = false;
  std::optional<std::uint64_t> seed;
};

int cmd_bench(const BenchArgs& a) {
  if (a.runs < 5) throw UsageError("--runs must be >= 5");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  for (int g : a.groups) {
    if (g < 1 || g > ck.model.config.group_size) {
      throw std::runtime_error("checkpoint does not support group size " + std::to_string(g) + " (max " +
                               std::to_string(ck.model.config.group_size) + ")");
    }
  }
  const std::uint64_t seed = resolve_seed(a.seed);
  RngStream rng = RngStream::derive(seed, {0x62656e63ULL});
  VideoTensor cond(1, ck.model.config.frame_shape());
  for (auto& v : cond.data()) v = static_cast<float>(rng.uniform());

  std::cout << "group  batch  frames_per_second  median_seconds\n";
  for (int g : a.groups) {
    for (int b : a.batches) {
      if (b < 1) throw UsageError("batch sizes must be >= 1");
      RolloutConfig rc;
      rc.decode.steps = a.steps;
      if (a.guidance) rc.decode.guidance = kPresetSixSteps.scales;
      rc.group = g;
      const std::vector<VideoTensor> conds(static_cast<std::size_t>(b), cond);
      std::vector<std::uint64_t> seeds(static_cast<std::size_t>(b));
      for (auto& s : seeds) s = rng.next_u64();
      std::vector<double> times;
      for (int r = 0; r < a.runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        rollout_batch(ck.model, std::span<const VideoTensor>(conds), a.frames, rc, seeds);
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];
      std::cout << std::setw(5) << g << std::setw(7) << b << std::setw(19) << std::fixed << std::setprecision(3)
                << (a.frames * b) / median << std::setw(16) << std::setprecision(4) << median << "\n";
      std::cout.unsetf(std::ios::floatfield);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CanvasMAR video generation: gen-data, train, sample, eval, bench"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset with a manifest");
  g->add_option("--kind", gen.kind, "bouncing or coinflip")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--clips", gen.spec.clips)->capture_default_str();
  g->add_option("--frames", gen.spec.frames)->capture_default_str();
  g->add_option("--height", gen.spec.height)->capture_default_str();
  g->add_option("--width", gen.spec.width)->capture_default_str();
  g->add_option("--channels", gen.spec.channels)->capture_default_str();
  g->add_option("--shapes", gen.spec.shapes)->capture_default_str();
  g->add_option("--size", gen.spec.size, "Shape half-extent in pixels")->capture_default_str();
  g->add_option("--min-speed", gen.spec.min_speed)->capture_default_str();
  g->add_option("--max-speed", gen.spec.max_speed)->capture_default_str();
  g->add_option("--seed", gen.seed);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train from a key-value run config");
  t->add_option("--config", train.config, "Run config file")->required();
  t->add_option("--data", train.data, "Dataset directory (overrides data_dir)");
  t->add_option("--out", train.out, "Output directory (overrides out_dir)");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--steps", train.steps, "Total steps (overrides train_steps)");
  t->add_option("--seed", train.seed);

  SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Roll out frames from a checkpoint");
  s->add_option("--checkpoint", sample.checkpoint)->required();
  s->add_option("--cond", sample.cond, "Conditioning CMV1 video")->required();
  s->add_option("--out", sample.out, "Output prefix")->required();
  s->add_option("--cond-frames", sample.cond_frames)->capture_default_str();
  s->add_option("--frames", sample.frames, "Frames to generate")->capture_default_str();
  s->add_option("--steps", sample.steps, "Decoding steps K per frame")->capture_default_str();
  s->add_option("--ws", sample.ws, "Spatial guidance scale")->capture_default_str();
  s->add_option("--wt", sample.wt, "Temporal guidance scale")->capture_default_str();
  s->add_flag("--no-guidance", sample.no_guidance, "Fully conditional branch only");
  s->add_option("--r", sample.r, "Previous-frame noise augmentation")->capture_default_str();
  s->add_option("--r-prime", sample.r_prime, "Canvas noise augmentation")->capture_default_str();
  s->add_option("--group", sample.group, "Frames per temporal step (default: checkpoint's)");
  s->add_flag("--dump-canvas", sample.dump_canvas, "Also write the projected canvases");
  s->add_option("--seed", sample.seed);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Frechet-proxy evaluation protocols");
  e->add_option("--checkpoint", eval.checkpoint);
  e->add_option("--data", eval.data, "Test dataset directory")->required();
  e->add_option("--protocol", eval.protocol, "standard, debiased or both")->capture_default_str();
  e->add_option("--model", eval.model, "canvasmar, oracle or noise")->capture_default_str();
  e->add_option("--config", eval.config, "Run config supplying sampling settings");
  e->add_option("--out", eval.out, "Append JSON records to this file");
  e->add_option("--test-clips", eval.eval.test_clips)->capture_default_str();
  e->add_option("--samples", eval.eval.samples_per_condition, "Generated clips per condition")->capture_default_str();
  e->add_option("--repeats", eval.eval.repeats)->capture_default_str();
  e->add_option("--cond-frames", eval.eval.cond_frames)->capture_default_str();
  e->add_option("--clip-frames", eval.eval.clip_frames)->capture_default_str();
  e->add_option("--seed", eval.seed);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Sampling throughput per (group, batch)");
  b->add_option("--checkpoint", bench.checkpoint)->required();
  b->add_option("--group", bench.groups, "Group sizes")->delimiter(',')->capture_default_str();
  b->add_option("--batch", bench.batches, "Batch sizes")->delimiter(',')->capture_default_str();
  b->add_option("--frames", bench.frames, "Frames generated per run")->capture_default_str();
  b->add_option("--runs", bench.runs, "Timed runs per cell (>= 5)")->capture_default_str();
  b->add_option("--steps", bench.steps)->capture_default_str();
  b->add_flag("--guidance", bench.guidance, "Time the three-branch guided path");
  b->add_option("--seed", bench.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(train);
    if (*s) return cmd_sample(sample);
    if (*e) return cmd_eval(eval);
    if (*b) return cmd_bench(bench);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 1;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
