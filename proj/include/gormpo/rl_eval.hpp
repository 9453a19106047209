#pragma once

#include "gormpo/density/estimator.hpp"
#include "gormpo/dynamics.hpp"
#include "gormpo/envs.hpp"

#include <functional>

namespace gormpo {

using PolicyFn = std::function<Vec(const Vec& obs, RngStream& rng)>;

struct EpisodeRecord {
  Mat states;   // T x d_s, observation at each step (before acting)
  Mat actions;  // T x d_a
  Vec rewards;  // T
  std::string env_id;
  uint64_t seed = 0;

  int64_t length() const { return states.rows(); }
  double episode_return() const { return rewards.sum(); }
};

inline EpisodeRecord run_episode(Env& env, const PolicyFn& policy, uint64_t seed,
                                 bool deterministic_env_reset = false) {
  (void)deterministic_env_reset;
  RngStream root(seed);
  RngStream env_rng = root.child("env");
  RngStream pol_rng = root.child("policy");
  std::vector<Vec> states, actions;
  std::vector<double> rewards;
  Vec obs = env.reset(env_rng);
  bool done = false;
  while (!done) {
    Vec a = policy(obs, pol_rng);
    StepResult sr = env.step(a, env_rng);
    states.push_back(obs);
    actions.push_back(a);
    rewards.push_back(sr.reward);
    obs = sr.obs;
    done = sr.done;
  }
  EpisodeRecord rec;
  int64_t n = int64_t(states.size());
  rec.states = Mat(n, states[0].size());
  rec.actions = Mat(n, actions[0].size());
  rec.rewards = Vec(n);
  for (int64_t i = 0; i < n; ++i) {
    rec.states.row(i) = states[size_t(i)].transpose();
    rec.actions.row(i) = actions[size_t(i)].transpose();
    rec.rewards(i) = rewards[size_t(i)];
  }
  rec.env_id = env.info().id;
  rec.seed = seed;
  return rec;
}

/// Re-run the environment with the logged actions; the replay oracle for
/// evaluate_return.
inline double replay_episode(Env& env, const EpisodeRecord& rec) {
  RngStream root(rec.seed);
  RngStream env_rng = root.child("env");
  env.reset(env_rng);
  double total = 0.0;
  for (int64_t i = 0; i < rec.length(); ++i)
    total += env.step(rec.actions.row(i).transpose(), env_rng).reward;
  return total;
}

struct ReturnStats {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

/// Undiscounted episodic return over seeded episodes.
inline ReturnStats evaluate_return(Env& env, const PolicyFn& policy, int64_t n_episodes,
                                   uint64_t seed) {
  if (n_episodes < 1) throw ParameterError("evaluate_return: n_episodes must be >= 1");
  ReturnStats out;
  RngStream root(seed);
  for (int64_t ep = 0; ep < n_episodes; ++ep) {
    EpisodeRecord rec = run_episode(env, policy, root.child(uint64_t(ep)).seed());
    out.returns.push_back(rec.episode_return());
  }
  auto m = moments(out.returns);
  out.mean = m.mean;
  out.std = m.std;
  return out;
}

// ---- weaning metrics ----

inline constexpr double kStableMapSlope = 1.36;
inline constexpr double kStableHrSlope = 2.16;
inline constexpr double kStablePulsatSlope = 1.95;

/// Least-squares slope of a uniformly sampled series.
inline double lsq_slope(const Vec& series) {
  Eigen::Index n = series.size();
  double t_mean = double(n - 1) / 2.0;
  double x_mean = series.mean();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double dt = double(i) - t_mean;
    num += dt * (series(i) - x_mean);
    den += dt * dt;
  }
  return num / den;
}

// Hemodynamic stability of one 6-observation window: every vital's absolute
// slope strictly below its threshold.
inline bool is_stable(const Vec& map_series, const Vec& hr_series, const Vec& pulsat_series) {
  if (map_series.size() != kToyWeanWindow || hr_series.size() != kToyWeanWindow ||
      pulsat_series.size() != kToyWeanWindow)
    throw ParameterError("is_stable: window must hold exactly 6 observations");
  return std::abs(lsq_slope(map_series)) < kStableMapSlope &&
         std::abs(lsq_slope(hr_series)) < kStableHrSlope &&
         std::abs(lsq_slope(pulsat_series)) < kStablePulsatSlope;
}

inline bool is_stable_obs(const Vec& toywean_obs) {
  return is_stable(toywean_series(toywean_obs, 0), toywean_series(toywean_obs, 1),
                   toywean_series(toywean_obs, 2));
}

// Weaned credit for the transition from a_i to a_{i+1}: -1 on any increase,
// the step size for decreases of 1 or 2 levels, 0 otherwise.
inline double weaned_credit(int level_now, int level_next) {
  int d = level_now - level_next;
  if (d < 0) return -1.0;
  if (d == 1 || d == 2) return double(d);
  return 0.0;
}

// WS: stability-gated average of weaned credits over the episode; 0 when no
// step is stable (the gate count is the denominator).
inline double weaning_score(const EpisodeRecord& rec) {
  if (rec.env_id != "toywean") throw ParameterError("weaning_score: needs a toywean episode");
  int64_t stable_count = 0;
  double credit = 0.0;
  for (int64_t i = 0; i + 1 < rec.length(); ++i) {
    if (!is_stable_obs(rec.states.row(i).transpose())) continue;
    ++stable_count;
    credit += weaned_credit(int(std::lround(rec.actions(i, 0))),
                            int(std::lround(rec.actions(i + 1, 0))));
  }
  return stable_count == 0 ? 0.0 : credit / double(stable_count);
}

/// ACP: accumulated magnitude of support-level jumps larger than 2.
inline double action_change_penalty(const std::vector<double>& levels) {
  if (levels.size() < 2) throw ParameterError("action_change_penalty: need at least 2 actions");
  double total = 0.0;
  for (size_t i = 1; i < levels.size(); ++i) {
    double d = std::abs(levels[i] - levels[i - 1]);
    if (d > 2.0) total += d;
  }
  return total;
}

inline double action_change_penalty(const EpisodeRecord& rec) {
  std::vector<double> levels(size_t(rec.length()));
  for (int64_t i = 0; i < rec.length(); ++i) levels[size_t(i)] = rec.actions(i, 0);
  return action_change_penalty(levels);
}

// Fraction of model-rollout (s', a) pairs that fall below the calibrated
// density threshold: a scalar stand-in for support-coverage projections.
inline double ood_visitation(const DynamicsEnsemble& dynamics,
                             const density::DensityEstimator& density, const PolicyFn& policy,
                             const Mat& start_states, int horizon, uint64_t seed) {
  double tau = density.threshold();
  RngStream root(seed);
  RngStream dyn_rng = root.child("dynamics");
  RngStream den_rng = root.child("density");
  RngStream pol_rng = root.child("policy");
  int64_t below = 0, total = 0;
  for (int64_t i = 0; i < start_states.rows(); ++i) {
    Vec s = start_states.row(i).transpose();
    for (int h = 0; h < horizon; ++h) {
      Vec a = policy(s, pol_rng);
      auto [s_next, r_hat] = dynamics.predict(s, a, dyn_rng);
      (void)r_hat;
      Vec pair(s_next.size() + a.size());
      pair << s_next, a;
      if (density.log_prob(pair, den_rng) < tau) ++below;
      ++total;
      s = s_next;
    }
  }
  return double(below) / double(total);
}

}  // namespace gormpo
