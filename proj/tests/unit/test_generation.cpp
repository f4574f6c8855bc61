#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "canvasmar/generation/generation.hpp"
#include "helpers.hpp"

using namespace canvasmar;
using canvasmar::testing::small_config;

TEST_CASE("cosine set sizes") {
  CHECK(cosine_set_sizes(16, 1) == std::vector<Index>{16});
  CHECK(cosine_set_sizes(16, 2) == std::vector<Index>{4, 12});
  CHECK_THROWS_AS(cosine_set_sizes(4, 5), std::invalid_argument);
  CHECK_THROWS_AS(cosine_set_sizes(4, 0), std::invalid_argument);
  SUBCASE("singleton sets at K = n") {
    const auto s = cosine_set_sizes(16, 16);
    CHECK(std::all_of(s.begin(), s.end(), [](Index v) { return v == 1; }));
  }
  SUBCASE("sums, positivity and a strictly decreasing curve") {
    for (Index n : {1, 2, 7, 16, 64, 100}) {
      for (Index k = 1; k <= n; ++k) {
        const auto s = cosine_set_sizes(n, k);
        CHECK(static_cast<Index>(s.size()) == k);
        CHECK(std::accumulate(s.begin(), s.end(), Index{0}) == n);
        CHECK(*std::min_element(s.begin(), s.end()) >= 1);
        const auto m = masked_count_curve(s);
        CHECK(m.front() == n);
        CHECK(m.back() == 0);
        for (std::size_t i = 1; i < m.size(); ++i) CHECK(m[i] < m[i - 1]);
      }
    }
  }
  SUBCASE("repair matches one-at-a-time donation from the largest bucket") {
    for (Index n = 1; n <= 160; ++n) {
      for (Index k = 1; k <= n; ++k) {
        std::vector<Index> curve(static_cast<std::size_t>(k) + 1);
        curve[0] = n;
        for (Index j = 1; j < k; ++j) {
          curve[static_cast<std::size_t>(j)] = static_cast<Index>(
              std::ceil(static_cast<double>(n) * std::cos(std::numbers::pi * static_cast<double>(j) / (2.0 * k)) -
                        1e-9 * static_cast<double>(n)));
        }
        std::vector<Index> expected(static_cast<std::size_t>(k));
        for (std::size_t j = 0; j < expected.size(); ++j) expected[j] = curve[j] - curve[j + 1];
        for (auto& v : expected) {
          if (v != 0) continue;
          // std::max_element returns the first maximum: lowest index on ties.
          --*std::max_element(expected.begin(), expected.end());
          v = 1;
        }
        REQUIRE(cosine_set_sizes(n, k) == expected);
      }
    }
  }
}

TEST_CASE("permutation sampling") {
  RngStream rng(1);
  CHECK(sample_permutation(1, rng) == std::vector<Index>{0});
  SUBCASE("bijection") {
    auto p = sample_permutation(50, rng);
    std::sort(p.begin(), p.end());
    for (Index i = 0; i < 50; ++i) CHECK(p[static_cast<std::size_t>(i)] == i);
  }
  SUBCASE("uniform over S_3") {
    std::map<std::vector<Index>, int> counts;
    const int draws = 60000;
    for (int i = 0; i < draws; ++i) ++counts[sample_permutation(3, rng)];
    CHECK(counts.size() == 6);
    for (const auto& [perm, c] : counts) CHECK(std::abs(c / static_cast<double>(draws) - 1.0 / 6.0) < 0.03 / 6.0);
  }
  SUBCASE("mask plan sets partition the positions") {
    const MaskPlan plan = make_mask_plan(16, 3, rng);
    CHECK(plan.steps() == 3);
    CHECK(plan.offsets() == std::vector<Index>{0, plan.sizes[0], plan.sizes[0] + plan.sizes[1], 16});
    std::vector<Index> seen;
    for (int k = 0; k < plan.steps(); ++k)
      for (Index p : plan.set(k)) seen.push_back(p);
    std::sort(seen.begin(), seen.end());
    for (Index i = 0; i < 16; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("noise augmentation") {
  RngStream rng(2);
  const MatrixD x = gaussian<double>(rng, 10, 10);
  SUBCASE("r = 0 leaves x unchanged") {
    RngStream r(3);
    CHECK(augment<double>(x, 0.0, r) == x);
  }
  SUBCASE("r = 1 is pure noise independent of x") {
    RngStream a(3), b(3);
    CHECK(augment<double>(x, 1.0, a) == augment<double>(MatrixD::Zero(10, 10), 1.0, b));
  }
  SUBCASE("r = 0.5 on zeros has variance 0.25") {
    RngStream r(4);
    const MatrixD y = augment<double>(MatrixD::Zero(100, 100), 0.5, r);
    const double var = (y.array() - y.mean()).square().mean();
    CHECK(std::abs(var - 0.25) < 0.025);
  }
  SUBCASE("r outside [0, 1] is an error") {
    RngStream r(5);
    CHECK_THROWS(augment<double>(x, 1.5, r));
    CHECK_THROWS(augment<double>(x, -0.1, r));
  }
  SUBCASE("configuration ranges") {
    CHECK_NOTHROW((AugmentConfig{0.3, 0.6, AugmentMode::inference}.validate()));
    CHECK_THROWS((AugmentConfig{0.2, 0.4, AugmentMode::inference}.validate()));
    CHECK_THROWS((AugmentConfig{0.4, 0.7, AugmentMode::inference}.validate()));
    CHECK_NOTHROW((AugmentConfig{0.0, 0.8, AugmentMode::train}.validate()));
    CHECK_THROWS((AugmentConfig{0.0, 0.9, AugmentMode::train}.validate()));
    RngStream r(6);
    for (int i = 0; i < 1000; ++i) {
      const AugmentConfig c = AugmentConfig::draw_train(r);
      CHECK(c.mode == AugmentMode::train);
      CHECK((c.r >= 0.0 && c.r < 0.8 && c.r_prime >= 0.0 && c.r_prime < 0.8));
    }
  }
}

TEST_CASE("compositional guidance reductions are exact") {
  RngStream rng(7);
  const MatrixF vu = gaussian<float>(rng, 5, 16), vt = gaussian<float>(rng, 5, 16), vst = gaussian<float>(rng, 5, 16);
  CHECK(cfg_velocity<float>(vu, vt, vst, {1.0, 1.0}) == vst);
  CHECK(cfg_velocity<float>(vu, vt, vst, {0.0, 1.0}) == vt);
  CHECK(cfg_velocity<float>(vu, vt, vst, {0.0, 0.0}) == vu);
  const MatrixF general = cfg_velocity<float>(vu, vt, vst, {2.5, 1.1});
  const MatrixF direct = vu + 1.1f * (vt - vu) + 2.5f * (vst - vt);
  CHECK((general - direct).cwiseAbs().maxCoeff() < 1e-5);
  CHECK_THROWS(cfg_velocity<float>(vu, vt.topRows(4), vst, {1.0, 1.0}));
}

TEST_CASE("guidance presets") {
  CHECK(kPresetSixSteps.steps == 6);
  CHECK(kPresetSixSteps.scales.w_s == 2.5);
  CHECK(kPresetSixSteps.scales.w_t == 1.1);
  CHECK(kPresetTwelveSteps.steps == 12);
  CHECK(kPresetTwelveSteps.scales.w_s == 2.25);
  CHECK(kPresetTwelveSteps.scales.w_t == 1.0);
}

TEST_CASE("generate_frame") {
  const ModelConfig c = small_config();
  CanvasMar<float> m(c, 1);
  canvasmar::testing::randomize(m, 3, 0.1);
  NoGradScope<float> ng;
  const auto h = patchify_video(canvasmar::testing::random_video(1, c.frame_shape(), 4), c.patch);
  const auto zt = temporal_forward(m, std::span<const TokenGrid>(h));
  const auto zs = canvas_forward(m, zt, h[0], 1);

  SUBCASE("fully sequential decode with singleton sets") {
    DecodeOptions o;
    o.steps = static_cast<int>(c.tokens());
    const TokenGrid g = generate_frame(m, zt, &zs[0], o, 5);
    CHECK(g.tokens.rows() == c.tokens());
    CHECK(all_finite(g.tokens));
  }
  SUBCASE("same seed gives an identical frame, a new seed a different one") {
    DecodeOptions o;
    o.guidance = GuidanceScales{2.5, 1.1};
    const TokenGrid a = generate_frame(m, zt, &zs[0], o, 5), b = generate_frame(m, zt, &zs[0], o, 5);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens != generate_frame(m, zt, &zs[0], o, 6).tokens);
  }
  SUBCASE("uniform-mask fallback terminates with finite pixels") {
    DecodeOptions o;
    o.guidance = GuidanceScales{2.5, 1.1};
    const TokenGrid g = generate_frame<float>(m, zt, nullptr, o, 5);
    CHECK(all_finite(g.tokens));
  }
  SUBCASE("unit guidance equals the guidance-free path bitwise") {
    DecodeOptions guided, plain;
    guided.guidance = GuidanceScales{1.0, 1.0};
    CHECK(generate_frame(m, zt, &zs[0], guided, 8).tokens == generate_frame(m, zt, &zs[0], plain, 8).tokens);
  }
}

TEST_CASE("rollout") {
  const ModelConfig c = small_config();
  CanvasMar<float> m(c, 1);
  canvasmar::testing::randomize(m, 5, 0.1);
  const VideoTensor cond = canvasmar::testing::random_video(2, c.frame_shape(), 6);
  RolloutConfig rc;
  rc.decode.steps = 3;
  rc.decode.guidance = GuidanceScales{2.5, 1.1};

  SUBCASE("num_new = 0 returns the conditioning frames") {
    CHECK(rollout(m, cond, 0, rc, 1).video == cond);
  }
  SUBCASE("frame counts, value range and determinism") {
    const RolloutResult a = rollout(m, cond, 3, rc, 7);
    CHECK(a.video.frames() == 5);
    CHECK(a.canvases.frames() == 3);
    CHECK(a.video.slice(0, 2) == cond);
    for (float v : a.video.data()) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK(rollout(m, cond, 3, rc, 7).video == a.video);
  }
  SUBCASE("extending num_new keeps the earlier frames") {
    const RolloutResult shorter = rollout(m, cond, 2, rc, 9);
    const RolloutResult longer = rollout(m, cond, 3, rc, 9);
    CHECK(longer.video.slice(0, 4) == shorter.video);
  }
  SUBCASE("sliding window beyond max_frames") {
    const RolloutResult r = rollout(m, cond, c.max_frames + 1, rc, 11);
    CHECK(r.video.frames() == c.max_frames + 3);
  }
  SUBCASE("group decoding") {
    m.set_group_size(2);
    rc.group = 2;
    const RolloutResult shorter = rollout(m, cond, 2, rc, 12);
    const RolloutResult odd = rollout(m, cond, 3, rc, 12);
    CHECK(odd.video.frames() == 5);
    CHECK(odd.video.slice(0, 4) == shorter.video);
    rc.group = 3;
    CHECK_THROWS(rollout(m, cond, 2, rc, 12));
  }
  SUBCASE("batched rollouts equal the single ones") {
    const std::vector<VideoTensor> conds{cond, cond.slice(1, 1)};
    const std::vector<std::uint64_t> seeds{3, 4};
    const auto batch = rollout_batch(m, std::span<const VideoTensor>(conds), 2, rc, seeds);
    // Same draws; only the matrix-product blocking differs with the batch size.
    for (std::size_t i = 0; i < 2; ++i) {
      const VideoTensor single = rollout(m, conds[i], 2, rc, seeds[i]).video;
      REQUIRE(batch[i].video.frames() == single.frames());
      double worst = 0;
      for (std::size_t j = 0; j < single.data().size(); ++j) {
        worst = std::max(worst, static_cast<double>(std::abs(single.data()[j] - batch[i].video.data()[j])));
      }
      CAPTURE(worst);
      CHECK(worst < 1e-4);
    }
  }
}
