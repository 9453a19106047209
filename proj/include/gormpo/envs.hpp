#pragma once

#include "gormpo/common.hpp"

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace gormpo {

struct EnvInfo {
  std::string id;
  int obs_dim = 0;
  bool discrete_actions = false;
  int n_actions = 0;       // discrete action count (levels)
  int action_low_level = 0;  // lowest discrete level
  int action_dim = 0;      // continuous action dimension
  double action_low = -1.0, action_high = 1.0;
  int horizon = 0;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual EnvInfo info() const = 0;
  virtual Vec reset(RngStream& rng) = 0;
  virtual StepResult step(const Vec& action, RngStream& rng) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

// ---- physiological reward pieces ----

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Penalty for a low minimum arterial pressure in the window.
inline double penalty_min_map(double map_min) { return relu(7.0 * (60.0 - map_min) / 20.0); }
/// Penalty for sustained hypertension (high mean pressure).
inline double penalty_hypertension(double map_mean) { return relu((map_mean - 106.0) / 18.0); }
/// Quadratic penalty for heart rate away from 75 bpm.
inline double penalty_heart_rate(double hr) { return relu((hr - 75.0) * (hr - 75.0) / 250.0 - 1.0); }
/// Two-sided pulsatility penalty (low and high tails).
inline double penalty_pulsatility(double p) {
  return relu(7.0 * (20.0 - p) / 20.0) + relu((p - 50.0) / 20.0);
}

/// Negated sum of the physiological penalties over window statistics.
/// Z-scoring and clipping to [-2,2] happen at dataset level, not here.
inline double reward_components(double map_min, double map_mean, double hr_min, double pulsat_min) {
  return -(penalty_min_map(map_min) + penalty_hypertension(map_mean) +
           penalty_heart_rate(hr_min) + penalty_pulsatility(pulsat_min));
}

// ---- ToyWean: pump-weaning stand-in environment ----
//
// State: sliding window of the last 6 (map, hr, pulsat) observations plus the
// current support level P in {2..9}. Each vital relaxes toward a fixed point
// that is linear in P, with Gaussian noise; dropping support by several levels
// at once shocks the vitals. Observation layout: window rows oldest-first,
// 3 features per row, then the support level (19 entries).

struct ToyWeanConfig {
  double map_base = 58.0, map_gain = 2.5, map_rate = 0.4, map_noise = 1.0, map_drop_shock = 6.0;
  double hr_base = 78.0, hr_gain = -0.8, hr_rate = 0.3, hr_noise = 1.5, hr_drop_shock = 3.0;
  double pulsat_base = 16.0, pulsat_gain = 2.2, pulsat_rate = 0.35, pulsat_noise = 0.8,
         pulsat_drop_shock = 1.5;
  int horizon = 36;          // 6 hours at 10-minute steps
  int init_support = 9;
  double reward_clip = 10.0;
};

inline constexpr int kToyWeanWindow = 6;
inline constexpr int kToyWeanFeatures = 3;  // map, hr, pulsat
inline constexpr int kToyWeanObsDim = kToyWeanWindow * kToyWeanFeatures + 1;
inline constexpr int kToyWeanMinLevel = 2;
inline constexpr int kToyWeanMaxLevel = 9;

/// One vital's series (length 6, oldest first) out of a ToyWean observation.
/// feature: 0 = map, 1 = hr, 2 = pulsat.
inline Vec toywean_series(const Vec& obs, int feature) {
  Vec out(kToyWeanWindow);
  for (int i = 0; i < kToyWeanWindow; ++i) out(i) = obs(i * kToyWeanFeatures + feature);
  return out;
}
inline int toywean_support(const Vec& obs) {
  return int(std::lround(obs(kToyWeanObsDim - 1)));
}

class ToyWeanEnv final : public Env {
 public:
  explicit ToyWeanEnv(ToyWeanConfig cfg = {}) : cfg_(cfg) {}

  EnvInfo info() const override {
    EnvInfo m;
    m.id = "toywean";
    m.obs_dim = kToyWeanObsDim;
    m.discrete_actions = true;
    m.n_actions = kToyWeanMaxLevel - kToyWeanMinLevel + 1;
    m.action_low_level = kToyWeanMinLevel;
    m.action_dim = 1;
    m.horizon = cfg_.horizon;
    return m;
  }

  Vec reset(RngStream& rng) override {
    support_ = cfg_.init_support;
    t_ = 0;
    // initial spread scales with the dynamics noise so a noiseless
    // configuration resets deterministically
    double map0 = 80.0 + 2.0 * cfg_.map_noise * rng.normal();
    double hr0 = 72.0 + 2.0 * cfg_.hr_noise * rng.normal();
    double pulsat0 = 34.0 + 2.5 * cfg_.pulsat_noise * rng.normal();
    for (int i = 0; i < kToyWeanWindow; ++i) {
      window_[i] = {map0 + 0.3 * cfg_.map_noise * rng.normal(),
                    hr0 + 0.3 * cfg_.hr_noise * rng.normal(),
                    pulsat0 + 0.3 * cfg_.pulsat_noise * rng.normal()};
    }
    return observation();
  }

  StepResult step(const Vec& action, RngStream& rng) override {
    int level = int(std::lround(action(0)));
    if (level < kToyWeanMinLevel || level > kToyWeanMaxLevel)
      throw ParameterError("ToyWeanEnv: support level must be in {2..9}, got " + std::to_string(level));
    double drop = std::max(double(support_ - level), 0.0);
    const auto& cur = window_.back();
    double map_next = cur[0] + cfg_.map_rate * (cfg_.map_base + cfg_.map_gain * level - cur[0]) -
                      cfg_.map_drop_shock * drop + cfg_.map_noise * rng.normal();
    double hr_next = cur[1] + cfg_.hr_rate * (cfg_.hr_base + cfg_.hr_gain * level - cur[1]) +
                     cfg_.hr_drop_shock * drop + cfg_.hr_noise * rng.normal();
    double pulsat_next = cur[2] +
                         cfg_.pulsat_rate * (cfg_.pulsat_base + cfg_.pulsat_gain * level - cur[2]) -
                         cfg_.pulsat_drop_shock * drop + cfg_.pulsat_noise * rng.normal();
    for (int i = 0; i + 1 < kToyWeanWindow; ++i) window_[i] = window_[i + 1];
    window_.back() = {map_next, hr_next, pulsat_next};
    support_ = level;
    ++t_;

    double map_min = window_[0][0], map_sum = 0.0, hr_min = window_[0][1], pl_min = window_[0][2];
    for (const auto& w : window_) {
      map_min = std::min(map_min, w[0]);
      map_sum += w[0];
      hr_min = std::min(hr_min, w[1]);
      pl_min = std::min(pl_min, w[2]);
    }
    double r = reward_components(map_min, map_sum / kToyWeanWindow, hr_min, pl_min);
    StepResult res;
    res.obs = observation();
    res.reward = clamp(r, -cfg_.reward_clip, cfg_.reward_clip);
    res.done = t_ >= cfg_.horizon;
    return res;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<ToyWeanEnv>(*this); }

  const ToyWeanConfig& config() const { return cfg_; }

 private:
  Vec observation() const {
    Vec obs(kToyWeanObsDim);
    for (int i = 0; i < kToyWeanWindow; ++i)
      for (int f = 0; f < kToyWeanFeatures; ++f) obs(i * kToyWeanFeatures + f) = window_[i][f];
    obs(kToyWeanObsDim - 1) = double(support_);
    return obs;
  }

  ToyWeanConfig cfg_;
  std::array<std::array<double, kToyWeanFeatures>, kToyWeanWindow> window_{};
  int support_ = kToyWeanMaxLevel;
  int t_ = 0;
};

// ---- PointMass: double-integrator reaching task ----
//
// Observation: [position (2), velocity (2)]. Explicit-Euler dynamics:
// position advances by velocity * dt, then velocity integrates the (clipped)
// action minus drag, plus Gaussian noise.

struct PointMassConfig {
  double dt = 0.1;
  double drag = 0.25;
  double noise = 0.02;
  double box = 3.0;        // position clipped to [-box, box]^2
  double ctrl_cost = 0.01;
  std::array<double, 2> goal = {0.0, 0.0};
  int horizon = 200;
  // fixed reset state when set (diagnostics); otherwise position is uniform
  std::optional<std::array<double, 2>> init_pos;
  std::optional<std::array<double, 2>> init_vel;
};

inline constexpr int kPointMassObsDim = 4;

class PointMassEnv final : public Env {
 public:
  explicit PointMassEnv(PointMassConfig cfg = {}) : cfg_(cfg) {}

  EnvInfo info() const override {
    EnvInfo m;
    m.id = "pointmass";
    m.obs_dim = kPointMassObsDim;
    m.discrete_actions = false;
    m.action_dim = 2;
    m.action_low = -1.0;
    m.action_high = 1.0;
    m.horizon = cfg_.horizon;
    return m;
  }

  Vec reset(RngStream& rng) override {
    t_ = 0;
    pos_ = cfg_.init_pos.value_or(std::array<double, 2>{
        rng.uniform(-cfg_.box * 0.8, cfg_.box * 0.8), rng.uniform(-cfg_.box * 0.8, cfg_.box * 0.8)});
    vel_ = cfg_.init_vel.value_or(std::array<double, 2>{0.0, 0.0});
    return observation();
  }

  StepResult step(const Vec& action, RngStream& rng) override {
    std::array<double, 2> a = {clamp(action(0), -1.0, 1.0), clamp(action(1), -1.0, 1.0)};
    for (int i = 0; i < 2; ++i) {
      pos_[i] = clamp(pos_[i] + cfg_.dt * vel_[i], -cfg_.box, cfg_.box);
      vel_[i] += cfg_.dt * (a[i] - cfg_.drag * vel_[i]) + cfg_.noise * rng.normal();
    }
    ++t_;
    double dx = pos_[0] - cfg_.goal[0], dy = pos_[1] - cfg_.goal[1];
    StepResult res;
    res.obs = observation();
    res.reward = -std::sqrt(dx * dx + dy * dy) - cfg_.ctrl_cost * (a[0] * a[0] + a[1] * a[1]);
    res.done = t_ >= cfg_.horizon;
    return res;
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<PointMassEnv>(*this); }

  const PointMassConfig& config() const { return cfg_; }

 private:
  Vec observation() const {
    Vec obs(kPointMassObsDim);
    obs << pos_[0], pos_[1], vel_[0], vel_[1];
    return obs;
  }

  PointMassConfig cfg_;
  std::array<double, 2> pos_{}, vel_{};
  int t_ = 0;
};

// ---- scripted behavior policies for offline data collection ----

using BehaviorPolicy = std::function<Vec(const Vec& obs, RngStream& rng)>;

// Weans one level at a time when the recent pressure and pulsatility look
// comfortable, raises support when pressure sags, and explores at rate eps
// (uniform level, occasionally far from the current one).
inline BehaviorPolicy make_toywean_behavior(double eps = 0.1, double wean_prob = 0.4) {
  return [eps, wean_prob](const Vec& obs, RngStream& rng) -> Vec {
    int support = toywean_support(obs);
    Vec map_series = toywean_series(obs, 0);
    Vec pulsat_series = toywean_series(obs, 2);
    double map_recent = 0.5 * (map_series(kToyWeanWindow - 1) + map_series(kToyWeanWindow - 2));
    int level = support;
    if (rng.uniform() < eps) {
      level = int(rng.uniform_int(kToyWeanMinLevel, kToyWeanMaxLevel));
    } else if (map_recent < 62.0) {
      level = std::min(support + 1, kToyWeanMaxLevel);
    } else if (map_recent > 67.0 && pulsat_series.minCoeff() > 21.0 && rng.uniform() < wean_prob) {
      level = std::max(support - 1, kToyWeanMinLevel);
    }
    Vec a(1);
    a << double(level);
    return a;
  };
}

/// PD controller toward the goal with Gaussian exploration noise.
inline BehaviorPolicy make_pointmass_behavior(double kp = 0.8, double kd = 1.0, double noise = 0.3,
                                              std::array<double, 2> goal = {0.0, 0.0}) {
  return [kp, kd, noise, goal](const Vec& obs, RngStream& rng) -> Vec {
    Vec a(2);
    for (int i = 0; i < 2; ++i)
      a(i) = clamp(-kp * (obs(i) - goal[i]) - kd * obs(2 + i) + noise * rng.normal(), -1.0, 1.0);
    return a;
  };
}

}  // namespace gormpo
