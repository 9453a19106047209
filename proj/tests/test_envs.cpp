#include "gormpo/envs.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;

TEST_CASE("reward components match the penalty tables") {
  // all penalties inactive
  REQUIRE(reward_components(70.0, 90.0, 75.0, 35.0) == 0.0);
  // minimum MAP of 40 scores the maximal 7
  REQUIRE_THAT(penalty_min_map(40.0), Catch::Matchers::WithinAbs(7.0, 1e-12));
  REQUIRE_THAT(reward_components(40.0, 90.0, 75.0, 35.0), Catch::Matchers::WithinAbs(-7.0, 1e-12));
  // hypertension at mean MAP 124
  REQUIRE_THAT(penalty_hypertension(124.0), Catch::Matchers::WithinAbs(1.0, 1e-12));
  // heart rate 100: (25^2/250 - 1) = 1.5
  REQUIRE_THAT(penalty_heart_rate(100.0), Catch::Matchers::WithinAbs(1.5, 1e-12));
  // pulsatility inside [20, 50] is free, outside is not
  REQUIRE(penalty_pulsatility(30.0) == 0.0);
  REQUIRE(penalty_pulsatility(10.0) > 0.0);
  REQUIRE(penalty_pulsatility(60.0) > 0.0);
}

TEST_CASE("toywean trajectories are pure functions of the seed-stream") {
  ToyWeanEnv env;
  auto run = [&](uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> trace;
    Vec obs = env.reset(rng);
    bool done = false;
    RngStream act_rng(seed + 1);
    while (!done) {
      Vec a(1);
      a << double(act_rng.uniform_int(2, 9));
      auto sr = env.step(a, rng);
      trace.push_back(sr.reward);
      trace.insert(trace.end(), sr.obs.data(), sr.obs.data() + sr.obs.size());
      done = sr.done;
    }
    return trace;
  };
  REQUIRE(run(5) == run(5));
  REQUIRE(run(5) != run(6));
}

TEST_CASE("toywean enforces the action range and horizon") {
  ToyWeanEnv env;
  RngStream rng(0);
  env.reset(rng);
  Vec bad(1);
  bad << 1.0;
  REQUIRE_THROWS_AS(env.step(bad, rng), ParameterError);
  bad << 10.0;
  REQUIRE_THROWS_AS(env.step(bad, rng), ParameterError);

  env.reset(rng);
  Vec hold(1);
  hold << 9.0;
  int steps = 0;
  bool done = false;
  while (!done) {
    auto sr = env.step(hold, rng);
    done = sr.done;
    ++steps;
  }
  REQUIRE(steps == env.config().horizon);
}

TEST_CASE("noiseless toywean converges to the configured fixed point") {
  ToyWeanConfig cfg;
  cfg.map_noise = cfg.hr_noise = cfg.pulsat_noise = 0.0;
  cfg.horizon = 400;
  ToyWeanEnv env(cfg);
  RngStream rng(3);
  env.reset(rng);
  Vec hold(1);
  hold << 5.0;
  Vec obs;
  for (int i = 0; i < 200; ++i) obs = env.step(hold, rng).obs;
  double map_fp = cfg.map_base + cfg.map_gain * 5.0;
  double hr_fp = cfg.hr_base + cfg.hr_gain * 5.0;
  double pulsat_fp = cfg.pulsat_base + cfg.pulsat_gain * 5.0;
  REQUIRE_THAT(toywean_series(obs, 0)(kToyWeanWindow - 1), Catch::Matchers::WithinAbs(map_fp, 1e-6));
  REQUIRE_THAT(toywean_series(obs, 1)(kToyWeanWindow - 1), Catch::Matchers::WithinAbs(hr_fp, 1e-6));
  REQUIRE_THAT(toywean_series(obs, 2)(kToyWeanWindow - 1),
               Catch::Matchers::WithinAbs(pulsat_fp, 1e-6));
}

TEST_CASE("abrupt support drops destabilize arterial pressure") {
  ToyWeanEnv env;
  int below_60 = 0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    RngStream rng{uint64_t(trial)};
    env.reset(rng);
    Vec hold(1);
    hold << 9.0;
    for (int i = 0; i < 5; ++i) env.step(hold, rng);
    Vec drop(1);
    drop << 5.0;  // a 4-level drop
    auto sr = env.step(drop, rng);
    if (toywean_series(sr.obs, 0)(kToyWeanWindow - 1) < 60.0) ++below_60;
  }
  REQUIRE(double(below_60) / trials > 0.9);
}

TEST_CASE("single-level weaning keeps pressure mostly stable") {
  ToyWeanEnv env;
  int stayed_safe = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    RngStream rng{uint64_t(trial) + 999};
    env.reset(rng);
    int level = 9;
    bool safe = true;
    bool done = false;
    int t = 0;
    while (!done) {
      if (t % 5 == 4 && level > 2) --level;  // wean one level every 5 steps
      Vec a(1);
      a << double(level);
      auto sr = env.step(a, rng);
      if (toywean_series(sr.obs, 0)(kToyWeanWindow - 1) < 55.0) safe = false;
      done = sr.done;
      ++t;
    }
    if (safe && level == 2) ++stayed_safe;
  }
  // gradual weaning from 9 to 2 within the horizon is usually achievable
  REQUIRE(double(stayed_safe) / trials > 0.7);
}

TEST_CASE("pointmass dynamics follow the explicit integrator") {
  PointMassConfig cfg;
  cfg.noise = 0.0;
  SECTION("at rest at the goal with zero action the reward is zero") {
    cfg.init_pos = {{0.0, 0.0}};
    PointMassEnv env(cfg);
    RngStream rng(0);
    env.reset(rng);
    auto sr = env.step(Vec::Zero(2), rng);
    REQUIRE_THAT(sr.reward, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("position advances by velocity * dt") {
    cfg.init_pos = {{1.0, -1.0}};
    cfg.init_vel = {{0.5, 0.25}};
    PointMassEnv env(cfg);
    RngStream rng(0);
    Vec obs0 = env.reset(rng);
    auto sr = env.step(Vec::Zero(2), rng);
    REQUIRE_THAT(sr.obs(0), Catch::Matchers::WithinAbs(obs0(0) + cfg.dt * 0.5, 1e-12));
    REQUIRE_THAT(sr.obs(1), Catch::Matchers::WithinAbs(obs0(1) + cfg.dt * 0.25, 1e-12));
  }
  SECTION("seeded runs replay bit-identically") {
    PointMassEnv env;
    auto run = [&](uint64_t seed) {
      RngStream rng(seed);
      Vec obs = env.reset(rng);
      double acc = 0.0;
      for (int i = 0; i < 50; ++i) {
        Vec a(2);
        a << std::sin(i * 0.1), std::cos(i * 0.1);
        auto sr = env.step(a, rng);
        acc += sr.reward + sr.obs.sum();
      }
      return acc;
    };
    REQUIRE(run(11) == run(11));
  }
}

TEST_CASE("scripted behaviors produce in-range actions") {
  ToyWeanEnv wean;
  auto wean_pi = make_toywean_behavior();
  RngStream rng(1);
  Vec obs = wean.reset(rng);
  for (int i = 0; i < 36; ++i) {
    Vec a = wean_pi(obs, rng);
    REQUIRE(a(0) >= 2.0);
    REQUIRE(a(0) <= 9.0);
    obs = wean.step(a, rng).obs;
  }
  PointMassEnv pm;
  auto pm_pi = make_pointmass_behavior();
  obs = pm.reset(rng);
  for (int i = 0; i < 50; ++i) {
    Vec a = pm_pi(obs, rng);
    REQUIRE(a.cwiseAbs().maxCoeff() <= 1.0);
    obs = pm.step(a, rng).obs;
  }
}
