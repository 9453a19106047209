#pragma once

#include "gormpo/common.hpp"

#include <vector>

namespace gormpo {

// Finite MDP with dense transition tensor. transition(s*A + a, s') holds
// P(s'|s,a); rows are probability vectors. Rewards are bounded by r_max.
struct TabularMDP {
  int n_states = 0;
  int n_actions = 0;
  Mat transition;   // (S*A) x S
  Mat reward;       // S x A
  Vec initial_dist; // S
  double gamma = 0.99;
  double r_max = 1.0;

  Eigen::Index row(int s, int a) const { return Eigen::Index(s) * n_actions + a; }

  void validate() const {
    if (n_states < 1 || n_actions < 1) throw ParameterError("TabularMDP: empty state or action space");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("TabularMDP: gamma must be in (0,1)");
    if (transition.rows() != Eigen::Index(n_states) * n_actions || transition.cols() != n_states)
      throw ParameterError("TabularMDP: transition shape mismatch");
    if (reward.rows() != n_states || reward.cols() != n_actions)
      throw ParameterError("TabularMDP: reward shape mismatch");
    if (initial_dist.size() != n_states) throw ParameterError("TabularMDP: initial_dist shape mismatch");
    for (Eigen::Index r = 0; r < transition.rows(); ++r) {
      if (transition.row(r).minCoeff() < 0.0 || std::abs(transition.row(r).sum() - 1.0) > 1e-12)
        throw ParameterError("TabularMDP: transition row " + std::to_string(r) + " is not a distribution");
    }
    if (initial_dist.minCoeff() < 0.0 || std::abs(initial_dist.sum() - 1.0) > 1e-12)
      throw ParameterError("TabularMDP: initial_dist is not a distribution");
    if (reward.cwiseAbs().maxCoeff() > r_max + 1e-12)
      throw ParameterError("TabularMDP: |reward| exceeds r_max");
  }
};

/// Stochastic tabular policy; probs(s, a) = pi(a|s), rows sum to one.
struct TabularPolicy {
  Mat probs;  // S x A

  void validate() const {
    for (Eigen::Index s = 0; s < probs.rows(); ++s)
      if (probs.row(s).minCoeff() < 0.0 || std::abs(probs.row(s).sum() - 1.0) > 1e-12)
        throw ParameterError("TabularPolicy: row " + std::to_string(s) + " is not a distribution");
  }

  static TabularPolicy uniform(int n_states, int n_actions) {
    TabularPolicy p;
    p.probs = Mat::Constant(n_states, n_actions, 1.0 / n_actions);
    return p;
  }
  /// Deterministic policy from an action index per state.
  static TabularPolicy deterministic(const std::vector<int>& actions, int n_actions) {
    TabularPolicy p;
    p.probs = Mat::Zero(Eigen::Index(actions.size()), n_actions);
    for (size_t s = 0; s < actions.size(); ++s) p.probs(Eigen::Index(s), actions[s]) = 1.0;
    return p;
  }
  static TabularPolicy random(int n_states, int n_actions, RngStream& rng) {
    TabularPolicy p;
    p.probs = Mat(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
      Vec w(n_actions);
      for (int a = 0; a < n_actions; ++a) w(a) = -std::log(1.0 - rng.uniform());
      p.probs.row(s) = (w / w.sum()).transpose();
    }
    return p;
  }
};

/// Random instance with rewards in [-1,1] (so r_max = 1) and rows drawn from
/// a flat Dirichlet. Identical seeds give bit-identical instances.
inline TabularMDP make_random_tabular(uint64_t seed, int n_states, int n_actions, double gamma) {
  if (n_states < 2 || n_actions < 2) throw ParameterError("make_random_tabular: need n_states >= 2 and n_actions >= 2");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError("make_random_tabular: gamma must be in (0,1)");
  RngStream rng(seed);
  TabularMDP mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.r_max = 1.0;
  mdp.transition = Mat(Eigen::Index(n_states) * n_actions, n_states);
  for (Eigen::Index r = 0; r < mdp.transition.rows(); ++r) {
    Vec w(n_states);
    for (int s = 0; s < n_states; ++s) w(s) = -std::log(1.0 - rng.uniform());
    double total = w.sum();
    // Renormalize exactly so the row sums to 1 at double precision.
    w /= total;
    w(n_states - 1) = 1.0 - w.head(n_states - 1).sum();
    mdp.transition.row(r) = w.transpose();
  }
  mdp.reward = Mat(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) mdp.reward(s, a) = rng.uniform(-1.0, 1.0);
  Vec w(n_states);
  for (int s = 0; s < n_states; ++s) w(s) = -std::log(1.0 - rng.uniform());
  w /= w.sum();
  w(n_states - 1) = 1.0 - w.head(n_states - 1).sum();
  mdp.initial_dist = w;
  mdp.validate();
  return mdp;
}

/// Policy-conditioned quantities r_pi (S) and P_pi (S x S).
inline void policy_kernels(const TabularMDP& mdp, const TabularPolicy& pi, Vec& r_pi, Mat& p_pi) {
  int S = mdp.n_states, A = mdp.n_actions;
  r_pi = Vec::Zero(S);
  p_pi = Mat::Zero(S, S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double w = pi.probs(s, a);
      if (w == 0.0) continue;
      r_pi(s) += w * mdp.reward(s, a);
      p_pi.row(s) += w * mdp.transition.row(mdp.row(s, a));
    }
}

/// State values from the exact linear solve of V = r_pi + gamma P_pi V.
inline Vec exact_values(const TabularMDP& mdp, const TabularPolicy& pi) {
  if (pi.probs.rows() != mdp.n_states || pi.probs.cols() != mdp.n_actions)
    throw ParameterError("exact_values: policy shape mismatch");
  Vec r_pi;
  Mat p_pi;
  policy_kernels(mdp, pi, r_pi, p_pi);
  Mat lhs = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi;
  return lhs.partialPivLu().solve(r_pi);
}

/// Expected discounted return eta = E_{s0 ~ mu0}[V(s0)].
inline double exact_return(const TabularMDP& mdp, const TabularPolicy& pi) {
  return mdp.initial_dist.dot(exact_values(mdp, pi));
}

// Discounted occupancy over (s,a). Unnormalized by default: entries sum to
// 1/(1-gamma) and satisfy eta = sum rho * r. Pass normalized=true for the
// probability-measure view (scaled by 1-gamma).
inline Mat occupancy(const TabularMDP& mdp, const TabularPolicy& pi, bool normalized = false) {
  if (pi.probs.rows() != mdp.n_states || pi.probs.cols() != mdp.n_actions)
    throw ParameterError("occupancy: policy shape mismatch");
  Vec r_pi;
  Mat p_pi;
  policy_kernels(mdp, pi, r_pi, p_pi);
  // d = mu0 + gamma P_pi^T d  (discounted state-visitation totals)
  Mat lhs = Mat::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi.transpose();
  Vec d = lhs.partialPivLu().solve(mdp.initial_dist);
  Mat rho = pi.probs.array().colwise() * d.array();
  if (normalized) rho *= (1.0 - mdp.gamma);
  return rho;
}

/// Monte-Carlo discounted return; the slow oracle for exact_return.
inline double monte_carlo_return(const TabularMDP& mdp, const TabularPolicy& pi,
                                 int64_t n_episodes, int horizon, RngStream& rng,
                                 double* std_err = nullptr) {
  double sum = 0.0, sumsq = 0.0;
  for (int64_t ep = 0; ep < n_episodes; ++ep) {
    int s = int(rng.categorical(mdp.initial_dist));
    double g = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      int a = int(rng.categorical(pi.probs.row(s).transpose()));
      g += disc * mdp.reward(s, a);
      disc *= mdp.gamma;
      s = int(rng.categorical(mdp.transition.row(mdp.row(s, a)).transpose()));
    }
    sum += g;
    sumsq += g * g;
  }
  double mean = sum / double(n_episodes);
  if (std_err) {
    double var = (sumsq / double(n_episodes) - mean * mean) / double(n_episodes - 1);
    *std_err = std::sqrt(std::max(var, 0.0));
  }
  return mean;
}

}  // namespace gormpo
