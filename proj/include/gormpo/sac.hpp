#pragma once

#include "gormpo/envs.hpp"
#include "gormpo/io.hpp"
#include "gormpo/train_loop.hpp"

namespace gormpo {

struct SacConfig {
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double target_update_coef = 0.005;
  double target_entropy = -1.0;
  std::vector<Eigen::Index> hidden = {256, 256};
  double init_alpha = 1.0;
};

struct TransitionBatch {
  Mat obs;
  Mat act;  // env-space actions (levels for discrete environments)
  Vec rew;
  Mat next_obs;
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha_value = 0.0;
  double entropy = 0.0;
  double mean_q = 0.0;
};

// Soft actor-critic over either a tanh-squashed Gaussian actor (continuous
// actions) or a categorical actor with expected-Q backups (discrete support
// levels). Twin critics, soft target updates, learned temperature. Both toy
// environments terminate only by truncation, so targets bootstrap through
// episode ends.
class SacAgent {
 public:
  SacAgent(const EnvInfo& env, const Vec& obs_mean, const Vec& obs_std, SacConfig cfg,
           uint64_t seed)
      : env_(env), cfg_(cfg), obs_mean_(obs_mean), obs_std_(obs_std) {
    RngStream rng(seed);
    RngStream init = rng.child("init");
    int d_s = env.obs_dim;
    if (env.discrete_actions) {
      int n_a = env.n_actions;
      actor_.init(d_s, cfg_.hidden, n_a, nn::Act::ReLU, init);
      q1_.init(d_s, cfg_.hidden, n_a, nn::Act::ReLU, init);
      q2_.init(d_s, cfg_.hidden, n_a, nn::Act::ReLU, init);
    } else {
      int d_a = env.action_dim;
      actor_.init(d_s, cfg_.hidden, 2 * d_a, nn::Act::ReLU, init);
      q1_.init(d_s + d_a, cfg_.hidden, 1, nn::Act::ReLU, init);
      q2_.init(d_s + d_a, cfg_.hidden, 1, nn::Act::ReLU, init);
    }
    q1_target_ = clone_mlp(q1_);
    q2_target_ = clone_mlp(q2_);
    log_alpha_ = nn::Parameter(Mat::Constant(1, 1, std::log(cfg_.init_alpha)));
    actor_opt_ = std::make_unique<nn::Adam>(actor_.params(), nn::Adam::Config{.lr = cfg_.actor_lr});
    std::vector<nn::Parameter*> critic_params;
    for (auto* p : q1_.params()) critic_params.push_back(p);
    for (auto* p : q2_.params()) critic_params.push_back(p);
    critic_opt_ = std::make_unique<nn::Adam>(critic_params, nn::Adam::Config{.lr = cfg_.critic_lr});
    alpha_opt_ = std::make_unique<nn::Adam>(std::vector<nn::Parameter*>{&log_alpha_},
                                            nn::Adam::Config{.lr = cfg_.alpha_lr});
  }

  double alpha() const { return std::exp(log_alpha_.value(0, 0)); }
  const SacConfig& config() const { return cfg_; }
  const EnvInfo& env_info() const { return env_; }

  /// Env-space action (level for discrete environments).
  Vec act(const Vec& obs, RngStream& rng, bool deterministic = false) const {
    Mat z = normalize_obs(obs.transpose());
    if (env_.discrete_actions) {
      Mat logits = actor_.forward_plain(z);
      Eigen::Index idx;
      if (deterministic) {
        logits.row(0).maxCoeff(&idx);
      } else {
        Vec logp = logits.row(0).transpose();
        Vec probs = (logp.array() - logsumexp(logp)).exp();
        idx = rng.categorical(probs);
      }
      Vec a(1);
      a << double(env_.action_low_level) + double(idx);
      return a;
    }
    Eigen::Index d_a = env_.action_dim;
    Mat out = actor_.forward_plain(z);
    Vec mu = out.row(0).head(d_a);
    Vec logstd = nn::soft_bound_plain(out.row(0).tail(d_a), kLogStdLo, kLogStdHi).row(0);
    Vec pre = mu;
    if (!deterministic)
      for (Eigen::Index j = 0; j < d_a; ++j) pre(j) += std::exp(logstd(j)) * rng.normal();
    return pre.array().tanh();
  }

  SacLosses update(const TransitionBatch& batch, RngStream& rng) {
    return env_.discrete_actions ? update_discrete(batch, rng) : update_continuous(batch, rng);
  }

  /// Actor-loss graph (exposed for gradient checking).
  nn::Var tape_actor_loss(nn::Tape& t, const Mat& obs_norm, RngStream& rng) const {
    if (env_.discrete_actions) {
      auto [loss, logpi_mean] = discrete_actor_graph(t, obs_norm);
      (void)logpi_mean;
      return loss;
    }
    Mat eps = rng.normal_mat(obs_norm.rows(), env_.action_dim);
    auto [loss, logpi_mean] = continuous_actor_graph(t, obs_norm, eps);
    (void)logpi_mean;
    return loss;
  }

  /// Actor parameters (gradient-check hook).
  std::vector<nn::Parameter*> actor_params() { return actor_.params(); }

  /// Values of every learnable parameter (bit-exact comparisons in tests).
  std::vector<Mat> parameter_values() const {
    std::vector<Mat> vals;
    auto grab = [&vals](const nn::Mlp& m) {
      for (const auto& l : m.layers) {
        vals.push_back(l.weight.value);
        vals.push_back(l.bias.value);
      }
    };
    grab(actor_);
    grab(q1_);
    grab(q2_);
    grab(q1_target_);
    grab(q2_target_);
    vals.push_back(log_alpha_.value);
    return vals;
  }

  void save(const std::string& path) const {
    ArrayFile af(1);
    af.put_string("kind", env_.discrete_actions ? "discrete" : "continuous");
    af.put_string("env_id", env_.id);
    af.put_scalar("obs_dim", double(env_.obs_dim));
    af.put_scalar("n_actions", double(env_.n_actions));
    af.put_scalar("action_low_level", double(env_.action_low_level));
    af.put_scalar("action_dim", double(env_.action_dim));
    af.put_scalar("horizon", double(env_.horizon));
    af.put_scalar("log_alpha", log_alpha_.value(0, 0));
    af.put_f64("obs_mean", obs_mean_);
    af.put_f64("obs_std", obs_std_);
    nn::put_mlp(af, "actor", actor_);
    nn::put_mlp(af, "q1", q1_);
    nn::put_mlp(af, "q2", q2_);
    nn::put_mlp(af, "q1_target", q1_target_);
    nn::put_mlp(af, "q2_target", q2_target_);
    af.save(path);
  }

  static SacAgent load(const std::string& path, SacConfig cfg = {}) {
    ArrayFile af = ArrayFile::load(path, 1);
    EnvInfo env;
    env.id = af.get_string("env_id");
    env.discrete_actions = af.get_string("kind") == "discrete";
    env.obs_dim = int(af.get_scalar("obs_dim"));
    env.n_actions = int(af.get_scalar("n_actions"));
    env.action_low_level = int(af.get_scalar("action_low_level"));
    env.action_dim = int(af.get_scalar("action_dim"));
    env.horizon = int(af.get_scalar("horizon"));
    SacAgent agent(env, af.get_mat("obs_mean"), af.get_mat("obs_std"), cfg, 0);
    agent.actor_ = nn::get_mlp(af, "actor");
    agent.q1_ = nn::get_mlp(af, "q1");
    agent.q2_ = nn::get_mlp(af, "q2");
    agent.q1_target_ = nn::get_mlp(af, "q1_target");
    agent.q2_target_ = nn::get_mlp(af, "q2_target");
    agent.log_alpha_.value(0, 0) = af.get_scalar("log_alpha");
    return agent;
  }

  Mat normalize_obs(const Mat& obs) const { return normalize_rows(obs, obs_mean_, obs_std_); }

 private:
  static constexpr double kLogStdLo = -5.0, kLogStdHi = 2.0;

  static nn::Mlp clone_mlp(const nn::Mlp& src) {
    nn::Mlp dst;
    dst.hidden_act = src.hidden_act;
    for (const auto& l : src.layers) {
      nn::Linear c;
      c.weight = nn::Parameter(l.weight.value);
      c.bias = nn::Parameter(l.bias.value);
      dst.layers.push_back(std::move(c));
    }
    return dst;
  }

  void soft_update(nn::Mlp& target, const nn::Mlp& online) {
    double tau = cfg_.target_update_coef;
    for (size_t i = 0; i < target.layers.size(); ++i) {
      target.layers[i].weight.value =
          (1.0 - tau) * target.layers[i].weight.value + tau * online.layers[i].weight.value;
      target.layers[i].bias.value =
          (1.0 - tau) * target.layers[i].bias.value + tau * online.layers[i].bias.value;
    }
  }

  void zero_all_grads() {
    for (auto* p : actor_.params()) p->zero_grad();
    for (auto* p : q1_.params()) p->zero_grad();
    for (auto* p : q2_.params()) p->zero_grad();
    log_alpha_.zero_grad();
  }

  // tanh-squashed Gaussian log-density given the pre-squash draw eps
  static Vec squashed_logpi(const Mat& eps, const Mat& logstd, const Mat& action_tanh) {
    Eigen::ArrayXXd normal_term =
        -0.5 * std::log(2.0 * M_PI) - logstd.array() - 0.5 * eps.array().square();
    Eigen::ArrayXXd corr = (1.0 - action_tanh.array().square() + 1e-6).log();
    return (normal_term - corr).rowwise().sum().matrix();
  }

  SacLosses update_continuous(const TransitionBatch& batch, RngStream& rng) {
    SacLosses out;
    Eigen::Index B = batch.obs.rows(), d_a = env_.action_dim;
    Mat s = normalize_obs(batch.obs);
    Mat sn = normalize_obs(batch.next_obs);
    double alpha_now = alpha();

    // target value (no gradients)
    Mat out_n = actor_.forward_plain(sn);
    Mat mu_n = out_n.leftCols(d_a);
    Mat logstd_n = nn::soft_bound_plain(out_n.rightCols(d_a), kLogStdLo, kLogStdHi);
    Mat eps_n = rng.normal_mat(B, d_a);
    Mat a_n = (mu_n + logstd_n.array().exp().matrix().cwiseProduct(eps_n)).array().tanh();
    Vec logpi_n = squashed_logpi(eps_n, logstd_n, a_n);
    Mat sa_n(B, sn.cols() + d_a);
    sa_n << sn, a_n;
    Vec q_min = q1_target_.forward_plain(sa_n).col(0).cwiseMin(q2_target_.forward_plain(sa_n).col(0));
    Vec y = batch.rew + cfg_.gamma * (q_min - alpha_now * logpi_n);

    // critic step
    Mat sa(B, s.cols() + d_a);
    sa << s, batch.act;
    zero_all_grads();
    {
      nn::Tape t;
      nn::Var yv = t.input(y);
      nn::Var l1 = t.mean(t.square(t.sub(q1_.forward(t, t.input(sa)), yv)));
      nn::Var l2 = t.mean(t.square(t.sub(q2_.forward(t, t.input(sa)), yv)));
      nn::Var loss = t.add(l1, l2);
      t.backward(loss);
      out.critic = t.val(loss)(0, 0);
    }
    critic_opt_->step();

    // actor step (critic gradients from this graph are discarded)
    Mat eps = rng.normal_mat(B, d_a);
    double logpi_mean_value = 0.0;
    zero_all_grads();
    {
      nn::Tape t;
      auto [loss, logpi_mean] = continuous_actor_graph(t, s, eps);
      t.backward(loss);
      out.actor = t.val(loss)(0, 0);
      logpi_mean_value = t.val(logpi_mean)(0, 0);
    }
    actor_opt_->step();

    finish_update(out, logpi_mean_value, y);
    return out;
  }

  // returns (actor loss, mean log pi) graph nodes
  std::pair<nn::Var, nn::Var> continuous_actor_graph(nn::Tape& t, const Mat& s_norm,
                                                     const Mat& eps) const {
    using nn::Var;
    Eigen::Index d_a = env_.action_dim;
    auto& self = const_cast<SacAgent&>(*this);
    Var outp = self.actor_.forward(t, t.input(s_norm));
    Var mu = t.slice_cols(outp, 0, d_a);
    Var logstd = nn::soft_bound(t, t.slice_cols(outp, d_a, d_a), kLogStdLo, kLogStdHi);
    Var pre = t.add(mu, t.mul(t.exp_(logstd), t.input(eps)));
    Var a = t.tanh_(pre);
    // log pi = sum_d [ -0.5 log 2pi - logstd - 0.5 eps^2 - log(1 - a^2 + 1e-6) ]
    Var normal_term = t.add_scalar(
        t.neg(t.add(logstd, t.scale(t.square(t.input(eps)), 0.5))), -0.5 * std::log(2.0 * M_PI));
    Var corr = t.log_(t.add_scalar(t.neg(t.square(a)), 1.0 + 1e-6));
    Var logpi = t.rowwise_sum(t.sub(normal_term, corr));
    Var sa = t.concat_cols(t.input(s_norm), a);
    Var q = t.cmin(self.q1_.forward(t, sa), self.q2_.forward(t, sa));
    Var loss = t.mean(t.sub(t.scale(logpi, alpha()), q));
    return {loss, t.mean(logpi)};
  }

  SacLosses update_discrete(const TransitionBatch& batch, RngStream& rng) {
    (void)rng;  // categorical backup is expectation-based; no draws needed
    SacLosses out;
    Eigen::Index B = batch.obs.rows();
    int n_a = env_.n_actions;
    Mat s = normalize_obs(batch.obs);
    Mat sn = normalize_obs(batch.next_obs);
    double alpha_now = alpha();

    // expected-Q target under the current policy at s'
    Mat logits_n = actor_.forward_plain(sn);
    Mat logpi_n(B, n_a);
    for (Eigen::Index i = 0; i < B; ++i)
      logpi_n.row(i) = logits_n.row(i).array() - logsumexp(logits_n.row(i).transpose());
    Mat pi_n = logpi_n.array().exp();
    Mat qt = q1_target_.forward_plain(sn).cwiseMin(q2_target_.forward_plain(sn));
    Vec v_next = (pi_n.array() * (qt.array() - alpha_now * logpi_n.array())).rowwise().sum();
    Vec y = batch.rew + cfg_.gamma * v_next;

    // one-hot of taken actions
    Mat onehot = Mat::Zero(B, n_a);
    for (Eigen::Index i = 0; i < B; ++i) {
      int idx = int(std::lround(batch.act(i, 0))) - env_.action_low_level;
      if (idx < 0 || idx >= n_a) throw ParameterError("sac: action outside the discrete range");
      onehot(i, idx) = 1.0;
    }

    zero_all_grads();
    {
      nn::Tape t;
      nn::Var hv = t.input(onehot);
      nn::Var yv = t.input(y);
      nn::Var q1_sel = t.rowwise_sum(t.mul(q1_.forward(t, t.input(s)), hv));
      nn::Var q2_sel = t.rowwise_sum(t.mul(q2_.forward(t, t.input(s)), hv));
      nn::Var loss = t.add(t.mean(t.square(t.sub(q1_sel, yv))), t.mean(t.square(t.sub(q2_sel, yv))));
      t.backward(loss);
      out.critic = t.val(loss)(0, 0);
    }
    critic_opt_->step();

    double logpi_mean_value = 0.0;
    zero_all_grads();
    {
      nn::Tape t;
      auto [loss, logpi_mean] = discrete_actor_graph(t, s);
      t.backward(loss);
      out.actor = t.val(loss)(0, 0);
      logpi_mean_value = t.val(logpi_mean)(0, 0);
    }
    actor_opt_->step();

    finish_update(out, logpi_mean_value, y);
    return out;
  }

  std::pair<nn::Var, nn::Var> discrete_actor_graph(nn::Tape& t, const Mat& s_norm) const {
    using nn::Var;
    auto& self = const_cast<SacAgent&>(*this);
    Var logits = self.actor_.forward(t, t.input(s_norm));
    Var logpi = t.add_colvec(logits, t.neg(t.logsumexp_rows(logits)));
    Var pi = t.exp_(logpi);
    Var minq = t.cmin(self.q1_.forward(t, t.input(s_norm)), self.q2_.forward(t, t.input(s_norm)));
    Var inner = t.mul(pi, t.sub(t.scale(logpi, alpha()), minq));
    Var loss = t.mean(t.rowwise_sum(inner));
    Var logpi_mean = t.mean(t.rowwise_sum(t.mul(pi, logpi)));
    return {loss, logpi_mean};
  }

  void finish_update(SacLosses& out, double logpi_mean, const Vec& targets) {
    // temperature: minimize -log_alpha * (logpi + target entropy)
    log_alpha_.zero_grad();
    log_alpha_.grad(0, 0) = -(logpi_mean + cfg_.target_entropy);
    alpha_opt_->step();
    soft_update(q1_target_, q1_);
    soft_update(q2_target_, q2_);
    out.alpha_value = alpha();
    out.entropy = -logpi_mean;
    out.mean_q = targets.mean();
    if (!std::isfinite(out.critic) || !std::isfinite(out.actor))
      throw TrainingError("sac: non-finite loss (batch reward mean " +
                          std::to_string(targets.mean()) + ")");
  }

  EnvInfo env_;
  SacConfig cfg_;
  Vec obs_mean_, obs_std_;
  nn::Mlp actor_, q1_, q2_, q1_target_, q2_target_;
  nn::Parameter log_alpha_;
  std::unique_ptr<nn::Adam> actor_opt_, critic_opt_, alpha_opt_;
};

}  // namespace gormpo
