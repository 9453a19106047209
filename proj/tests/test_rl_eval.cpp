#include "gormpo/rl_eval.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;

namespace {
// ToyWean observation with a constant window (all vitals flat) and a support
// level; flat windows are stable by construction.
Vec flat_obs(double map, double hr, double pulsat, int support) {
  Vec obs(kToyWeanObsDim);
  for (int i = 0; i < kToyWeanWindow; ++i) {
    obs(i * 3 + 0) = map;
    obs(i * 3 + 1) = hr;
    obs(i * 3 + 2) = pulsat;
  }
  obs(kToyWeanObsDim - 1) = double(support);
  return obs;
}
Vec ramped_obs(double map_slope) {
  Vec obs = flat_obs(70, 75, 30, 5);
  for (int i = 0; i < kToyWeanWindow; ++i) obs(i * 3 + 0) = 70.0 + map_slope * i;
  return obs;
}
EpisodeRecord episode_from_levels(const std::vector<int>& levels, bool stable = true) {
  EpisodeRecord rec;
  int64_t n = int64_t(levels.size());
  rec.states = Mat(n, kToyWeanObsDim);
  rec.actions = Mat(n, 1);
  rec.rewards = Vec::Zero(n);
  for (int64_t i = 0; i < n; ++i) {
    Vec obs = stable ? flat_obs(70, 75, 30, levels[size_t(i)]) : ramped_obs(3.0);
    rec.states.row(i) = obs.transpose();
    rec.actions(i, 0) = double(levels[size_t(i)]);
  }
  rec.env_id = "toywean";
  return rec;
}
}  // namespace

TEST_CASE("stability thresholds are pinned and strict") {
  REQUIRE(kStableMapSlope == 1.36);
  REQUIRE(kStableHrSlope == 2.16);
  REQUIRE(kStablePulsatSlope == 1.95);

  Vec flat = Vec::Constant(6, 42.0);
  REQUIRE(is_stable(flat, flat, flat));  // zero gradients

  // a MAP ramp of slope 2.0 exceeds 1.36
  Vec map_ramp(6);
  for (int i = 0; i < 6; ++i) map_ramp(i) = 2.0 * i;
  REQUIRE_FALSE(is_stable(map_ramp, flat, flat));

  // slope estimation is least squares, so noise around a flat line stays stable
  Vec wiggle(6);
  wiggle << 70, 70.4, 69.8, 70.2, 69.9, 70.1;
  REQUIRE(is_stable(wiggle, flat, flat));

  // strict inequality at the HR boundary: slopes marginally above fail,
  // marginally below pass
  auto hr_ramp = [](double slope) {
    Vec v(6);
    for (int i = 0; i < 6; ++i) v(i) = slope * i;
    return v;
  };
  REQUIRE_FALSE(is_stable(flat, hr_ramp(kStableHrSlope + 1e-9), flat));
  REQUIRE(is_stable(flat, hr_ramp(kStableHrSlope - 1e-9), flat));
  REQUIRE_FALSE(is_stable(flat, hr_ramp(2.16), flat));  // equality is not stable

  REQUIRE_THROWS_AS(is_stable(Vec::Zero(4), flat, flat), ParameterError);
  REQUIRE(std::abs(lsq_slope(map_ramp) - 2.0) < 1e-12);

  // slope-based stability ignores constant offsets
  REQUIRE(is_stable(wiggle.array() + 55.0, flat, flat) == is_stable(wiggle, flat, flat));
}

TEST_CASE("weaning score hand-computed cases") {
  // 4 stable decision steps: two single-level weans, two holds -> 2/4
  REQUIRE(weaning_score(episode_from_levels({5, 4, 3, 3, 3})) == 0.5);
  // any increase at a stable step contributes -1
  REQUIRE(weaning_score(episode_from_levels({5, 6})) == -1.0);
  // a 3-level drop is outside {1, 2} and contributes 0
  REQUIRE(weaning_score(episode_from_levels({9, 6})) == 0.0);
  // a 2-level drop earns its size
  REQUIRE(weaning_score(episode_from_levels({9, 7})) == 2.0);
  // no stable steps: defined as 0
  REQUIRE(weaning_score(episode_from_levels({5, 4, 3}, /*stable=*/false)) == 0.0);
  REQUIRE_THROWS_AS(weaning_score([] {
                      EpisodeRecord r = episode_from_levels({5, 4});
                      r.env_id = "pointmass";
                      return r;
                    }()),
                    ParameterError);
}

TEST_CASE("weaning score stays within [-1, 2] on random episodes") {
  RngStream rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> levels;
    for (int i = 0; i < 10; ++i) levels.push_back(int(rng.uniform_int(2, 9)));
    double ws = weaning_score(episode_from_levels(levels));
    REQUIRE(ws >= -1.0);
    REQUIRE(ws <= 2.0);
  }
}

TEST_CASE("action change penalty gates on |delta| > 2") {
  REQUIRE(action_change_penalty({5, 5, 5}) == 0.0);
  REQUIRE(action_change_penalty({9, 5}) == 4.0);
  REQUIRE(action_change_penalty({5, 6, 7, 8}) == 0.0);  // unit steps gated out
  REQUIRE(action_change_penalty({9, 5, 9}) == 8.0);
  REQUIRE(action_change_penalty({2, 5}) == 3.0);
  REQUIRE_THROWS_AS(action_change_penalty(std::vector<double>{5}), ParameterError);

  // translation invariance in levels
  RngStream rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> levels, shifted;
    for (int i = 0; i < 12; ++i) {
      double v = double(rng.uniform_int(2, 9));
      levels.push_back(v);
      shifted.push_back(v + 7.0);
    }
    REQUIRE(action_change_penalty(levels) == action_change_penalty(shifted));
  }
}

TEST_CASE("evaluate_return statistics and replay oracle") {
  SECTION("zero-reward environment scores zero with zero spread") {
    ToyWeanConfig cfg;
    cfg.reward_clip = 0.0;  // clamps every reward to exactly 0
    ToyWeanEnv env(cfg);
    auto policy = make_toywean_behavior();
    auto stats = evaluate_return(env, policy, 5, 1);
    REQUIRE(stats.mean == 0.0);
    REQUIRE(stats.std == 0.0);
  }
  SECTION("deterministic env and policy give zero spread") {
    ToyWeanConfig cfg;
    cfg.map_noise = cfg.hr_noise = cfg.pulsat_noise = 0.0;
    ToyWeanEnv env(cfg);
    auto policy = [](const Vec&, RngStream&) {
      Vec a(1);
      a << 7.0;
      return a;
    };
    auto stats = evaluate_return(env, policy, 4, 2);
    REQUIRE(stats.std == 0.0);
  }
  SECTION("episode replay reproduces the logged return") {
    ToyWeanEnv env;
    auto policy = make_toywean_behavior();
    EpisodeRecord rec = run_episode(env, policy, 33);
    ToyWeanEnv env2;
    REQUIRE(replay_episode(env2, rec) == rec.episode_return());
  }
}
