#pragma once

#include "gormpo/density/estimator.hpp"
#include "gormpo/dynamics.hpp"

#include <functional>
#include <sstream>

namespace gormpo {

// Density regularizer u = tanh(max(tau - log p, 0)). Saturates toward 1 deep
// in OOD territory, is exactly 0 on the in-distribution side, and is
// 1-Lipschitz in the log-density.
inline double penalty_u(double log_p, double tau) {
  return std::tanh(std::max(tau - log_p, 0.0));
}

/// Non-saturating variant, available only as an ablation.
inline double penalty_u_linear(double log_p, double tau) {
  return std::max(tau - log_p, 0.0);
}

/// Reward regularization r~ = r^ - lambda * u.
inline double penalize_reward(double r_hat, double u, double lambda) {
  return r_hat - lambda * u;
}

struct PenaltyConfig {
  double tau = 0.0;
  double lambda = 0.0;
  double underflow_floor = kLogDensityFloor;
  bool linear_penalty = false;  // ablation flag
};

struct PenalizedStepInfo {
  double u = 0.0;
  double log_p = 0.0;
  double r_hat = 0.0;
  double r_tilde = 0.0;
};

/// One line of the penalty trace log (line-delimited JSON records).
inline std::string penalty_trace_line(int64_t epoch, const PenalizedStepInfo& info) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"epoch\":" << epoch << ",\"u\":" << info.u << ",\"log_p\":" << info.log_p
     << ",\"r_hat\":" << info.r_hat << ",\"r_tilde\":" << info.r_tilde << "}";
  return os.str();
}

// The regularized model MDP: ensemble dynamics plus the density guardian.
// step() samples s' from the ensemble, scores (s', a) under the density
// model, and penalizes the predicted reward. With lambda = 0 or the guardian
// disabled the reward passes through untouched and the density model is never
// consulted, so rollouts are bit-identical to plain model rollouts.
class PenalizedModelMdp {
 public:
  PenalizedModelMdp(const DynamicsEnsemble& dynamics, const density::DensityEstimator* density,
                    PenaltyConfig penalty)
      : dynamics_(&dynamics), density_(density), penalty_(penalty) {
    if (!dynamics.fitted()) throw StateError("penalized mdp: dynamics ensemble is not fitted");
    if (guardian_active()) {
      if (!density_ || !density_->fitted())
        throw StateError("penalized mdp: density estimator is not fitted");
    }
  }

  bool guardian_active() const { return density_ != nullptr && penalty_.lambda != 0.0; }
  const PenaltyConfig& penalty() const { return penalty_; }
  const DynamicsEnsemble& dynamics() const { return *dynamics_; }
  const density::DensityEstimator* density() const { return density_; }

  std::tuple<Vec, double, PenalizedStepInfo> step(const Vec& s, const Vec& a,
                                                  RngStream& dyn_rng, RngStream& density_rng) const {
    auto [s_next, r_hat] = dynamics_->predict(s, a, dyn_rng);
    PenalizedStepInfo info;
    info.r_hat = r_hat;
    if (guardian_active()) {
      Vec pair(s_next.size() + a.size());
      pair << s_next, a;
      double lp = density_->log_prob(pair, density_rng);
      info.log_p = std::max(lp, penalty_.underflow_floor);
      info.u = penalty_.linear_penalty ? penalty_u_linear(info.log_p, penalty_.tau)
                                       : penalty_u(info.log_p, penalty_.tau);
      info.r_tilde = penalize_reward(r_hat, info.u, penalty_.lambda);
    } else {
      info.log_p = std::numeric_limits<double>::quiet_NaN();
      info.u = 0.0;
      info.r_tilde = r_hat;
    }
    return {s_next, info.r_tilde, info};
  }

 private:
  const DynamicsEnsemble* dynamics_;
  const density::DensityEstimator* density_;
  PenaltyConfig penalty_;
};

// ---- branched model rollouts ----

struct RolloutBatch {
  Mat observations;
  Mat actions;
  Vec rewards;        // penalized when the guardian is active
  Vec rewards_hat;    // raw model rewards
  Mat next_observations;
  Vec log_p;          // density scores (NaN when the guardian is off)
  Vec u;              // penalty values (0 when the guardian is off)
  std::vector<int> depth;  // 1..horizon
  double mean_penalty = 0.0;

  int64_t size() const { return observations.rows(); }
};

using RolloutPolicy = std::function<Vec(const Vec& obs, RngStream& rng)>;

// Branch `horizon`-step rollouts from the given start states. Transitions
// carry their rollout depth; episodes never terminate inside the model
// (truncation only).
inline RolloutBatch rollout(const PenalizedModelMdp& mdp, const RolloutPolicy& policy,
                            const Mat& start_states, int horizon, RngStream& rng) {
  if (horizon < 1) throw ParameterError("rollout: horizon must be >= 1");
  RngStream dyn_rng = rng.child("dynamics");
  RngStream density_rng = rng.child("density");
  RngStream pol_rng = rng.child("policy");
  int64_t n = start_states.rows();
  int d_s = int(start_states.cols());
  int d_a = mdp.dynamics().act_dim();
  RolloutBatch out;
  out.observations = Mat(n * horizon, d_s);
  out.actions = Mat(n * horizon, d_a);
  out.rewards = Vec(n * horizon);
  out.rewards_hat = Vec(n * horizon);
  out.next_observations = Mat(n * horizon, d_s);
  out.log_p = Vec(n * horizon);
  out.u = Vec(n * horizon);
  out.depth.resize(size_t(n * horizon));
  int64_t at = 0;
  double penalty_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    Vec s = start_states.row(i).transpose();
    for (int h = 0; h < horizon; ++h) {
      Vec a = policy(s, pol_rng);
      auto [s_next, r, info] = mdp.step(s, a, dyn_rng, density_rng);
      out.observations.row(at) = s.transpose();
      out.actions.row(at) = a.transpose();
      out.rewards(at) = r;
      out.rewards_hat(at) = info.r_hat;
      out.next_observations.row(at) = s_next.transpose();
      out.log_p(at) = info.log_p;
      out.u(at) = info.u;
      out.depth[size_t(at)] = h + 1;
      penalty_sum += info.u;
      ++at;
      s = s_next;
    }
  }
  out.mean_penalty = penalty_sum / double(n * horizon);
  return out;
}

}  // namespace gormpo
