#pragma once

#include "gormpo/guardian.hpp"
#include "gormpo/rl_eval.hpp"
#include "gormpo/sac.hpp"

#include <optional>

namespace gormpo {

// Ring buffer of model-generated transitions, tagged with rollout depth.
class ModelBuffer {
 public:
  explicit ModelBuffer(int64_t capacity, int d_s, int d_a)
      : cap_(capacity),
        obs_(Mat::Zero(capacity, d_s)),
        act_(Mat::Zero(capacity, d_a)),
        next_(Mat::Zero(capacity, d_s)),
        rew_(Vec::Zero(capacity)),
        depth_(size_t(capacity), 0) {}

  void push(const RolloutBatch& batch) {
    for (int64_t i = 0; i < batch.size(); ++i) {
      obs_.row(head_) = batch.observations.row(i);
      act_.row(head_) = batch.actions.row(i);
      next_.row(head_) = batch.next_observations.row(i);
      rew_(head_) = batch.rewards(i);
      depth_[size_t(head_)] = batch.depth[size_t(i)];
      head_ = (head_ + 1) % cap_;
      size_ = std::min(size_ + 1, cap_);
    }
  }

  int64_t size() const { return size_; }
  int max_depth() const {
    int d = 0;
    for (int64_t i = 0; i < size_; ++i) d = std::max(d, depth_[size_t(i)]);
    return d;
  }

  void sample_into(TransitionBatch& batch, int64_t offset, int64_t count, RngStream& rng) const {
    for (int64_t i = 0; i < count; ++i) {
      int64_t j = rng.uniform_int(0, size_ - 1);
      batch.obs.row(offset + i) = obs_.row(j);
      batch.act.row(offset + i) = act_.row(j);
      batch.next_obs.row(offset + i) = next_.row(j);
      batch.rew(offset + i) = rew_(j);
    }
  }

 private:
  int64_t cap_, size_ = 0, head_ = 0;
  Mat obs_, act_, next_;
  Vec rew_;
  std::vector<int> depth_;
};

struct GormpoConfig {
  int epochs = 100;
  int steps_per_epoch = 1000;
  int rollout_frequency = 1000;  // regenerate rollouts every this many steps
  int64_t rollout_batch = 10000;
  int rollout_horizon = 5;
  double real_ratio = 0.05;
  int64_t sac_batch = 256;
  int64_t model_buffer_capacity = 400000;
  int64_t eval_episodes = 10;
  std::optional<double> tau_override;  // ablations only
  uint64_t seed = 0;
  bool verbose = false;
  SacConfig sac;
};

struct EpochLog {
  int epoch = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double mean_penalty = 0.0;
  double eval_return = 0.0;
  double eval_std = 0.0;
};

inline int64_t real_samples_per_batch(double real_ratio, int64_t batch_size) {
  return int64_t(std::llround(real_ratio * double(batch_size)));
}

// The GORMPO training loop: branched penalized rollouts feed a ring buffer,
// SAC updates draw mixed real/model batches. lambda = 0 leaves the guardian
// path inert, which makes the run the plain-MBPO baseline; all subsystems
// draw from independently forked seed streams so that toggling the guardian
// does not perturb anything else.
inline std::pair<SacAgent, std::vector<EpochLog>> gormpo_train(
    Env& env, const OfflineDataset& ds, const DynamicsEnsemble& dynamics,
    const density::DensityEstimator* density, double lambda, const GormpoConfig& cfg,
    const std::string& trace_path = "") {
  if (lambda != 0.0 && (density == nullptr || !density->fitted()))
    throw ConfigError("gormpo_train: a fitted density estimator is required when lambda != 0");
  PenaltyConfig pc;
  pc.lambda = lambda;
  if (lambda != 0.0)
    pc.tau = cfg.tau_override ? *cfg.tau_override : density->threshold();
  PenalizedModelMdp mdp(dynamics, density, pc);

  RngStream root(cfg.seed);
  RngStream start_rng = root.child("rollout-starts");
  RngStream rollout_rng = root.child("rollouts");
  RngStream batch_rng = root.child("batches");
  RngStream update_rng = root.child("updates");
  RngStream eval_rng = root.child("eval");
  RngStream act_rng = root.child("actor");

  SacAgent agent(env.info(), ds.norm_stats.obs_mean, ds.norm_stats.obs_std, cfg.sac,
                 root.child("sac-init").seed());
  ModelBuffer buffer(cfg.model_buffer_capacity, ds.obs_dim(), ds.act_dim());

  int64_t n_real = real_samples_per_batch(cfg.real_ratio, cfg.sac_batch);
  std::vector<EpochLog> log;

  auto rollout_policy = [&agent](const Vec& obs, RngStream& rng) { return agent.act(obs, rng); };

  int64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double penalty_sum = 0.0;
    int64_t penalty_events = 0;
    double critic_sum = 0.0, actor_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step, ++global_step) {
      if (global_step % cfg.rollout_frequency == 0) {
        Mat starts(cfg.rollout_batch, ds.obs_dim());
        for (int64_t i = 0; i < cfg.rollout_batch; ++i)
          starts.row(i) = ds.observations.row(start_rng.uniform_int(0, ds.size() - 1));
        RngStream r = rollout_rng.child(uint64_t(global_step));
        RolloutBatch rb = rollout(mdp, rollout_policy, starts, cfg.rollout_horizon, r);
        buffer.push(rb);
        penalty_sum += rb.mean_penalty * double(rb.size());
        penalty_events += rb.size();
        if (!trace_path.empty() && mdp.guardian_active()) {
          for (int64_t i = 0; i < rb.size(); ++i) {
            PenalizedStepInfo info{rb.u(i), rb.log_p(i), rb.rewards_hat(i), rb.rewards(i)};
            append_line(trace_path, penalty_trace_line(epoch, info));
          }
        }
      }
      // mixed batch: round(real_ratio * B) real transitions, rest model
      TransitionBatch batch;
      batch.obs = Mat(cfg.sac_batch, ds.obs_dim());
      batch.act = Mat(cfg.sac_batch, ds.act_dim());
      batch.rew = Vec(cfg.sac_batch);
      batch.next_obs = Mat(cfg.sac_batch, ds.obs_dim());
      for (int64_t i = 0; i < n_real; ++i) {
        int64_t j = batch_rng.uniform_int(0, ds.size() - 1);
        batch.obs.row(i) = ds.observations.row(j);
        batch.act.row(i) = ds.actions.row(j);
        batch.rew(i) = ds.rewards(j);
        batch.next_obs.row(i) = ds.next_observations.row(j);
      }
      buffer.sample_into(batch, n_real, cfg.sac_batch - n_real, batch_rng);
      SacLosses losses = agent.update(batch, update_rng);
      critic_sum += losses.critic;
      actor_sum += losses.actor;
    }
    EpochLog row;
    row.epoch = epoch;
    row.critic_loss = critic_sum / double(cfg.steps_per_epoch);
    row.actor_loss = actor_sum / double(cfg.steps_per_epoch);
    row.alpha = agent.alpha();
    row.mean_penalty = penalty_events > 0 ? penalty_sum / double(penalty_events) : 0.0;
    auto eval_policy = [&agent](const Vec& obs, RngStream& rng) {
      return agent.act(obs, rng, /*deterministic=*/true);
    };
    ReturnStats stats =
        evaluate_return(env, eval_policy, cfg.eval_episodes, eval_rng.child(uint64_t(epoch)).seed());
    row.eval_return = stats.mean;
    row.eval_std = stats.std;
    log.push_back(row);
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %3d  return %8.3f  penalty %.4f  alpha %.4f\n", epoch,
                   row.eval_return, row.mean_penalty, row.alpha);
  }
  (void)act_rng;
  return {std::move(agent), std::move(log)};
}

// ---- lambda sweep ----

struct LambdaSweepRow {
  double lambda = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

/// Argmax of mean return; exact ties resolve toward the larger (more
/// conservative) lambda.
inline double select_best_lambda(const std::vector<LambdaSweepRow>& table) {
  if (table.empty()) throw ParameterError("select_best_lambda: empty table");
  double best_lambda = table.front().lambda;
  double best_return = table.front().mean_return;
  for (const auto& row : table) {
    if (row.mean_return > best_return ||
        (row.mean_return == best_return && row.lambda > best_lambda)) {
      best_return = row.mean_return;
      best_lambda = row.lambda;
    }
  }
  return best_lambda;
}

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> grid = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.8};
  return grid;
}

// One training run per grid point on a single seed, each evaluated with the
// online budget of eval_episodes episodes.
inline std::vector<LambdaSweepRow> lambda_sweep(Env& env, const OfflineDataset& ds,
                                                const DynamicsEnsemble& dynamics,
                                                const density::DensityEstimator* density,
                                                const std::vector<double>& grid,
                                                const GormpoConfig& cfg,
                                                int64_t eval_episodes = 100) {
  if (grid.empty()) throw ParameterError("lambda_sweep: empty grid");
  std::vector<LambdaSweepRow> table;
  for (double lambda : grid) {
    auto [agent, log] = gormpo_train(env, ds, dynamics, density, lambda, cfg);
    auto eval_policy = [&agent](const Vec& obs, RngStream& rng) {
      return agent.act(obs, rng, /*deterministic=*/true);
    };
    ReturnStats stats = evaluate_return(env, eval_policy, eval_episodes,
                                        RngStream(cfg.seed).child("sweep-eval").seed());
    table.push_back({lambda, stats.mean, stats.std});
  }
  return table;
}

}  // namespace gormpo
