#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "canvasmar/data/synthetic.hpp"
#include "canvasmar/training/training.hpp"
#include "helpers.hpp"

using namespace canvasmar;
using canvasmar::testing::small_config;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("canvasmar_test_" + name)).string();
}

TrainBatch random_batch(const ModelConfig& c, int videos, int frames, std::uint64_t seed) {
  TrainBatch b;
  for (int v = 0; v < videos; ++v) {
    b.videos.push_back(canvasmar::testing::random_video(frames, c.frame_shape(), seed + static_cast<std::uint64_t>(v)));
    b.stream_ids.push_back(100 + static_cast<std::uint64_t>(v));
  }
  return b;
}

}  // namespace

TEST_CASE("condition dropout frequencies") {
  RngStream rng(1);
  int spatial = 0, temporal = 0, both = 0;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const DropoutFlags f = DropoutFlags::draw(rng);
    spatial += f.drop_spatial && !f.drop_temporal;
    temporal += f.drop_temporal && !f.drop_spatial;
    both += f.drop_spatial && f.drop_temporal;
  }
  CHECK(std::abs(spatial / double(draws) - 0.05) < 0.005);
  CHECK(std::abs(temporal / double(draws) - 0.05) < 0.005);
  CHECK(std::abs(both / double(draws) - 0.05) < 0.005);
}

TEST_CASE("canvas loss") {
  RngStream rng(2);
  SUBCASE("prediction equal to target") {
    const MatrixD t = gaussian<double>(rng, 5, 4);
    CHECK(canvas_loss<double>(Tensor<double>(t), t).item() == 0.0);
  }
  SUBCASE("unit offset on 4-wide tokens costs 4 per token") {
    const MatrixD t = gaussian<double>(rng, 5, 4);
    const MatrixD p = t.array() + 1.0;
    CHECK(canvas_loss<double>(Tensor<double>(p), t).item() == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("matches a scalar-loop oracle") {
    const MatrixF p = gaussian<float>(rng, 7, 16), t = gaussian<float>(rng, 7, 16);
    double acc = 0;
    for (Index r = 0; r < 7; ++r) {
      double row = 0;
      for (Index c = 0; c < 16; ++c) row += (double(p(r, c)) - t(r, c)) * (double(p(r, c)) - t(r, c));
      acc += row;
    }
    const double oracle = acc / 7.0;
    CHECK(std::abs(canvas_loss<float>(Tensor<float>(p), t).item() - oracle) < 1e-6 * std::max(1.0, oracle));
    CHECK(std::abs(canvas_loss(TokenGrid{p, 0}, TokenGrid{t, 0}) - oracle) < 1e-6 * std::max(1.0, oracle));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS(canvas_loss<double>(Tensor<double>(MatrixD::Zero(2, 4)), MatrixD::Zero(3, 4)));
  }
}

TEST_CASE("flow matching loss degenerate cases") {
  const ModelConfig c = small_config();
  CanvasMar<double> m(c, 1);
  RngStream rng(3);
  const Tensor<double> z(gaussian<double>(rng, 4, c.dim));
  // Replays the draw order of the loss: x0 first, then one t per row.
  auto x0_for = [&](std::uint64_t seed) {
    RngStream r(seed);
    return gaussian<double>(r, 4, c.token_dim());
  };
  canvasmar::testing::param(m, "flow.out.weight").mutable_value().setZero();
  SUBCASE("zero head with x1 = x0") {
    canvasmar::testing::param(m, "flow.out.bias").mutable_value().setZero();
    RngStream r(5);
    CHECK(flow_matching_loss(m.flow, x0_for(5), z, r).item() == 0.0);
  }
  SUBCASE("head returning exactly x1 - x0") {
    MatrixD shift(1, c.token_dim());
    for (Index j = 0; j < shift.cols(); ++j) shift(0, j) = 0.25 * double(j % 3) - 0.25;
    canvasmar::testing::param(m, "flow.out.bias").mutable_value() = shift;
    const MatrixD x1 = x0_for(6).rowwise() + shift.row(0);
    RngStream r(6);
    CHECK(flow_matching_loss(m.flow, x1, z, r).item() < 1e-24);
  }
}

TEST_CASE("mask set sampling") {
  RngStream rng(4);
  CHECK(sample_mask_set(16, rng, 1.0).size() == 16);
  SUBCASE("mean masked fraction is 0.75") {
    double total = 0;
    for (int i = 0; i < 10000; ++i) total += double(sample_mask_set(16, rng).size()) / 16.0;
    CHECK(std::abs(total / 10000 - 0.75) < 0.02);
  }
  SUBCASE("sorted distinct subset of [0, n)") {
    for (int i = 0; i < 100; ++i) {
      const auto s = sample_mask_set(16, rng);
      CHECK(s.size() >= 8);
      for (std::size_t j = 0; j < s.size(); ++j) {
        CHECK((s[j] >= 0 && s[j] < 16));
        if (j > 0) CHECK(s[j] > s[j - 1]);
      }
    }
  }
}

TEST_CASE("parallel loss equals per-frame sequential losses") {
  const ModelConfig c = small_config();
  CanvasMar<double> m(c, 1);
  canvasmar::testing::randomize(m, 5, 0.1);
  const TrainBatch batch = random_batch(c, 2, 4, 6);
  TrainConfig tc;
  tc.condition_dropout = 0.2;
  NoGradScope<double> ng;
  const auto par = compute_losses(m, batch, tc, 77, LossMode::parallel);
  const auto seq = compute_losses(m, batch, tc, 77, LossMode::sequential);
  REQUIRE(par.items.size() == 6);
  REQUIRE(seq.items.size() == 6);
  for (std::size_t i = 0; i < par.items.size(); ++i) {
    CHECK(par.items[i].frame == seq.items[i].frame);
    const double pc = par.items[i].canvas.item(), sc = seq.items[i].canvas.item();
    const double pf = par.items[i].flow.item(), sf = seq.items[i].flow.item();
    CHECK(std::abs(pc - sc) <= 1e-5 * std::abs(sc));
    CHECK(std::abs(pf - sf) <= 1e-5 * std::abs(sf));
  }
  CHECK(std::abs(par.total.item() - seq.total.item()) <= 1e-5 * std::abs(seq.total.item()));
}

TEST_CASE("the loss for frame i never reads later frames") {
  const ModelConfig c = small_config();
  CanvasMar<double> m(c, 1);
  canvasmar::testing::randomize(m, 7, 0.1);
  TrainBatch batch = random_batch(c, 1, 4, 8);
  TrainConfig tc;
  NoGradScope<double> ng;
  const auto before = compute_losses(m, batch, tc, 5);
  for (int f = 2; f < 4; ++f)
    for (float& v : batch.videos[0].frame(f)) v = 1.0f - v;
  const auto after = compute_losses(m, batch, tc, 5);
  CHECK(before.items[0].canvas.item() == doctest::Approx(after.items[0].canvas.item()).epsilon(1e-12));
  CHECK(before.items[0].flow.item() == doctest::Approx(after.items[0].flow.item()).epsilon(1e-12));
  CHECK(before.items[2].canvas.item() != after.items[2].canvas.item());
}

TEST_CASE("every dropout pathway gives a finite loss") {
  const ModelConfig c = small_config();
  CanvasMar<float> m(c, 1);
  const TrainBatch batch = random_batch(c, 8, 3, 9);
  TrainConfig tc;
  tc.condition_dropout = 1.0 / 3.0;  // always one of the three branches
  NoGradScope<float> ng;
  const auto l = compute_losses(m, batch, tc, 11);
  CHECK(std::isfinite(l.total.item()));
  for (const auto& item : l.items) CHECK(std::isfinite(item.flow.item()));
}

TEST_CASE("train_step") {
  ModelConfig c = small_config();
  SUBCASE("finite metrics on random init") {
    CanvasMar<float> m(c, 1);
    auto opt = OptState<float>::zeros_like(m.parameters());
    const StepMetrics s = train_step(m, opt, random_batch(c, 2, 3, 1), TrainConfig{}, 3);
    CHECK(s.step == 1);
    CHECK(std::isfinite(s.total_loss));
    CHECK(std::isfinite(s.grad_norm));
    CHECK(s.learning_rate > 0);
  }
  SUBCASE("same seed gives the same loss at step 100") {
    auto run = [&] {
      CanvasMar<float> m(c, 2);
      auto opt = OptState<float>::zeros_like(m.parameters());
      const auto data = std::vector<VideoTensor>{canvasmar::testing::random_video(4, c.frame_shape(), 1),
                                                 canvasmar::testing::random_video(4, c.frame_shape(), 2)};
      StepMetrics last;
      for (long s = 0; s < 100; ++s) last = train_step(m, opt, sample_batch(data, 2, 2, 5, s), TrainConfig{}, 5);
      return last.total_loss;
    };
    CHECK(run() == run());
  }
  SUBCASE("non-finite loss aborts without touching the parameters") {
    CanvasMar<float> m(c, 1);
    auto opt = OptState<float>::zeros_like(m.parameters());
    canvasmar::testing::param(m, "canvas.projection.bias").mutable_value()(0, 0) = 1e30f;
    const MatrixF before = canvasmar::testing::param(m, "temporal.in_proj.weight").value();
    CHECK_THROWS_AS(train_step(m, opt, random_batch(c, 1, 2, 1), TrainConfig{}, 3), NumericError);
    CHECK(canvasmar::testing::param(m, "temporal.in_proj.weight").value() == before);
    CHECK(opt.step == 0);
  }
}

TEST_CASE("500 coin-flip steps halve the canvas loss") {
  ModelConfig c = small_config();
  SyntheticSpec spec;
  spec.kind = DatasetKind::coinflip;
  spec.clips = 64;
  spec.frames = 2;
  spec.height = spec.width = 16;
  spec.size = 3;
  spec.seed = 3;
  const auto data = gen_coinflip(spec);
  CanvasMar<float> m(c, 4);
  TrainConfig tc;
  tc.adam.learning_rate = 1e-3;
  tc.adam.warmup_steps = 20;
  auto opt = OptState<float>::zeros_like(m.parameters(), tc.adam);
  double first = 0, last = 0;
  for (long s = 0; s < 500; ++s) {
    const StepMetrics x = train_step(m, opt, sample_batch(data, 4, 2, 8, s), tc, 8);
    if (s < 10) first += x.canvas_loss / 10;
    if (s >= 490) last += x.canvas_loss / 10;
  }
  CAPTURE(first);
  CAPTURE(last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("sample_batch is deterministic in (seed, step)") {
  const ModelConfig c = small_config();
  const std::vector<VideoTensor> data{canvasmar::testing::random_video(6, c.frame_shape(), 1),
                                      canvasmar::testing::random_video(6, c.frame_shape(), 2)};
  const TrainBatch a = sample_batch(data, 3, 4, 9, 12), b = sample_batch(data, 3, 4, 9, 12);
  CHECK(a.videos == b.videos);
  CHECK(a.stream_ids == b.stream_ids);
  CHECK(a.frames() == 4);
  CHECK_THROWS(sample_batch(data, 3, 7, 9, 12));
}

TEST_CASE("checkpoints") {
  const ModelConfig c = small_config();
  CanvasMar<float> m(c, 5);
  canvasmar::testing::randomize(m, 6, 0.1);
  auto opt = OptState<float>::zeros_like(m.parameters());
  train_step(m, opt, random_batch(c, 1, 2, 1), TrainConfig{}, 3);
  const std::string path = temp_path("ckpt.cmar");
  save_checkpoint(path, m, opt);

  SUBCASE("round trip reproduces forward outputs bitwise") {
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.model.config == c);
    CHECK(loaded.opt.step == opt.step);
    const auto h = patchify_video(canvasmar::testing::random_video(3, c.frame_shape(), 7), c.patch);
    NoGradScope<float> ng;
    const auto za = temporal_forward(m, std::span<const TokenGrid>(h));
    const auto zb = temporal_forward(loaded.model, std::span<const TokenGrid>(h));
    CHECK(za.zt.value() == zb.zt.value());
    const auto ca = canvas_forward(m, za, h.back(), 1), cb = canvas_forward(loaded.model, zb, h.back(), 1);
    CHECK(canvas_project(m, ca[0]).tokens == canvas_project(loaded.model, cb[0]).tokens);
    RolloutConfig rc;
    rc.decode.steps = 2;
    CHECK(rollout(m, VideoTensor(1, c.frame_shape()), 1, rc, 3).video ==
          rollout(loaded.model, VideoTensor(1, c.frame_shape()), 1, rc, 3).video);
    for (std::size_t i = 0; i < opt.first_moment.size(); ++i) {
      CHECK(opt.first_moment[i] == loaded.opt.first_moment[i]);
      CHECK(opt.second_moment[i] == loaded.opt.second_moment[i]);
    }
  }
  SUBCASE("corrupted magic") {
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(0);
      f.put('X');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), CheckpointError);
  }
  SUBCASE("truncated file") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  SUBCASE("version mismatch") {
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(4);
      f.put(char(99));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), CheckpointError);
  }
  SUBCASE("loading into a model with another config names the field") {
    ModelConfig other = c;
    other.flow_layers = 3;
    CanvasMar<float> target(other, 1);
    auto topt = OptState<float>::zeros_like(target.parameters());
    CHECK_THROWS_WITH_AS(load_checkpoint_into(path, target, topt), doctest::Contains("flow_layers"), CheckpointError);
  }
  std::remove(path.c_str());
}
