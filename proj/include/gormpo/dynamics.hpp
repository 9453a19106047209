#pragma once

#include "gormpo/dataset.hpp"
#include "gormpo/train_loop.hpp"

namespace gormpo {

// Ensemble of probabilistic dynamics members, each a diagonal-Gaussian MLP
// over (delta-state, reward) in normalized coordinates. Members train on
// bootstrap resamples of the shared training split; a common holdout drives
// early stopping and elite selection.
class DynamicsEnsemble {
 public:
  struct Config {
    int n_members = 7;
    int n_elites = 5;
    double holdout_ratio = 0.2;
    std::vector<Eigen::Index> hidden = {200, 200};
    double lr = 1e-3;
    int max_epochs = 100;
    int64_t batch_size = 256;
    int patience = 8;
    double logstd_min = std::log(1e-4);
    double logstd_max = std::log(10.0);
    uint64_t seed = 0;
  };

  DynamicsEnsemble() = default;
  explicit DynamicsEnsemble(Config cfg) : cfg_(cfg) {
    if (cfg_.n_members < 1) throw ParameterError("dynamics: need at least one member");
    if (cfg_.n_elites > cfg_.n_members) cfg_.n_elites = cfg_.n_members;
  }

  bool fitted() const { return fitted_; }
  int n_members() const { return cfg_.n_members; }
  const std::vector<int>& elites() const { return elites_; }
  const std::vector<double>& holdout_losses() const { return holdout_losses_; }
  const Config& config() const { return cfg_; }

  void fit(const OfflineDataset& ds) {
    if (ds.size() < 100) throw ParameterError("dynamics: need at least 100 transitions");
    obs_dim_ = ds.obs_dim();
    act_dim_ = ds.act_dim();
    in_mean_ = Vec(obs_dim_ + act_dim_);
    in_std_ = Vec(obs_dim_ + act_dim_);
    in_mean_ << ds.norm_stats.obs_mean, ds.norm_stats.act_mean;
    in_std_ << ds.norm_stats.obs_std, ds.norm_stats.act_std;

    Mat inputs(ds.size(), obs_dim_ + act_dim_);
    inputs << ds.observations, ds.actions;
    Mat targets(ds.size(), obs_dim_ + 1);
    targets << (ds.next_observations - ds.observations), ds.rewards;
    target_mean_ = column_means(targets);
    target_std_ = column_stds(targets, target_mean_);
    Mat zin = normalize_rows(inputs, in_mean_, in_std_);
    Mat zt = normalize_rows(targets, target_mean_, target_std_);

    RngStream root(cfg_.seed);
    auto holdout_perm = root.child("holdout").permutation(ds.size());
    int64_t n_hold = std::max<int64_t>(1, int64_t(std::llround(cfg_.holdout_ratio * double(ds.size()))));
    Mat hold_in(n_hold, zin.cols()), hold_t(n_hold, zt.cols());
    Mat train_in(ds.size() - n_hold, zin.cols()), train_t(ds.size() - n_hold, zt.cols());
    for (int64_t i = 0; i < n_hold; ++i) {
      hold_in.row(i) = zin.row(holdout_perm[size_t(i)]);
      hold_t.row(i) = zt.row(holdout_perm[size_t(i)]);
    }
    for (int64_t i = n_hold; i < ds.size(); ++i) {
      train_in.row(i - n_hold) = zin.row(holdout_perm[size_t(i)]);
      train_t.row(i - n_hold) = zt.row(holdout_perm[size_t(i)]);
    }

    members_.clear();
    holdout_losses_.clear();
    for (int m = 0; m < cfg_.n_members; ++m) {
      RngStream mrng = root.child(uint64_t(m) + 1);
      nn::Mlp net;
      net.init(obs_dim_ + act_dim_, cfg_.hidden, 2 * (obs_dim_ + 1), nn::Act::SiLU,
               mrng);
      // bootstrap resample of the training split
      int64_t n_train = train_in.rows();
      Mat bs_in(n_train, zin.cols()), bs_t(n_train, zt.cols());
      RngStream boot = mrng.child("bootstrap");
      for (int64_t i = 0; i < n_train; ++i) {
        int64_t j = boot.uniform_int(0, n_train - 1);
        bs_in.row(i) = train_in.row(j);
        bs_t.row(i) = train_t.row(j);
      }
      auto params = net.params();
      nn::Adam opt(params, {.lr = cfg_.lr});
      nn::TrainLoopConfig loop{cfg_.max_epochs, cfg_.batch_size, cfg_.patience,
                               0.5,            0,              mrng.seed(), false};
      nn::run_train_loop(
          n_train, loop, opt, params,
          [&](const std::vector<int64_t>& ids, RngStream&) {
            Mat bi(Eigen::Index(ids.size()), bs_in.cols());
            Mat bt(Eigen::Index(ids.size()), bs_t.cols());
            for (size_t i = 0; i < ids.size(); ++i) {
              bi.row(Eigen::Index(i)) = bs_in.row(ids[i]);
              bt.row(Eigen::Index(i)) = bs_t.row(ids[i]);
            }
            nn::Tape t;
            nn::Var loss = tape_nll(t, net, bi, bt);
            t.backward(loss);
            return t.val(loss)(0, 0);
          },
          [&](RngStream&) { return plain_nll(net, hold_in, hold_t); });
      holdout_losses_.push_back(plain_nll(net, hold_in, hold_t));
      members_.push_back(std::move(net));
    }
    pick_elites();
    fitted_ = true;
  }

  // One forward sample: member chosen uniformly among elites when
  // unspecified; deterministic = use the member's predicted mean.
  std::pair<Vec, double> predict(const Vec& s, const Vec& a, RngStream& rng, int member = -1,
                                 bool deterministic = false) const {
    require_fitted();
    if (member >= cfg_.n_members) throw ParameterError("dynamics: member index out of range");
    int m = member >= 0 ? member : elites_[size_t(rng.uniform_int(0, int64_t(elites_.size()) - 1))];
    auto [mean, logstd] = head(m, s, a);
    Vec draw = mean;
    if (!deterministic)
      for (Eigen::Index j = 0; j < draw.size(); ++j)
        draw(j) += std::exp(logstd(j)) * rng.normal();
    Vec target = draw.cwiseProduct(target_std_) + target_mean_;
    Vec s_next = s + target.head(obs_dim_);
    return {s_next, target(obs_dim_)};
  }

  /// Normalized-space Gaussian head of one member (diagnostics and tests).
  std::pair<Vec, Vec> head(int member, const Vec& s, const Vec& a) const {
    require_fitted();
    Vec in(obs_dim_ + act_dim_);
    in << s, a;
    Mat z = normalize_rows(in.transpose(), in_mean_, in_std_);
    Mat out = members_[size_t(member)].forward_plain(z);
    Eigen::Index d = obs_dim_ + 1;
    Vec mean = out.row(0).head(d);
    Vec logstd = nn::soft_bound_plain(out.row(0).tail(d), cfg_.logstd_min, cfg_.logstd_max)
                     .row(0);
    return {mean, logstd};
  }

  /// Ensemble disagreement: std across elite member means (normalized units).
  double disagreement(const Vec& s, const Vec& a) const {
    require_fitted();
    Mat means(Eigen::Index(elites_.size()), obs_dim_ + 1);
    for (size_t i = 0; i < elites_.size(); ++i)
      means.row(Eigen::Index(i)) = head(elites_[i], s, a).first.transpose();
    Vec mu = means.colwise().mean();
    return std::sqrt(((means.rowwise() - mu.transpose()).array().square().colwise().sum() /
                      double(means.rows()))
                         .maxCoeff());
  }

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  void save(const std::string& path) const {
    require_fitted();
    ArrayFile af(1);
    af.put_scalar("n_members", double(cfg_.n_members));
    af.put_scalar("n_elites", double(cfg_.n_elites));
    af.put_scalar("obs_dim", double(obs_dim_));
    af.put_scalar("act_dim", double(act_dim_));
    af.put_scalar("logstd_min", cfg_.logstd_min);
    af.put_scalar("logstd_max", cfg_.logstd_max);
    af.put_f64("in_mean", in_mean_);
    af.put_f64("in_std", in_std_);
    af.put_f64("target_mean", target_mean_);
    af.put_f64("target_std", target_std_);
    std::vector<int64_t> el(elites_.begin(), elites_.end());
    af.put_i64("elites", el);
    Vec hl = Eigen::Map<const Vec>(holdout_losses_.data(), Eigen::Index(holdout_losses_.size()));
    af.put_f64("holdout_losses", hl);
    for (int m = 0; m < cfg_.n_members; ++m) nn::put_mlp(af, "member" + std::to_string(m), members_[size_t(m)]);
    af.save(path);
  }
  static DynamicsEnsemble load(const std::string& path) {
    ArrayFile af = ArrayFile::load(path, 1);
    DynamicsEnsemble e;
    e.cfg_.n_members = int(af.get_scalar("n_members"));
    e.cfg_.n_elites = int(af.get_scalar("n_elites"));
    e.cfg_.logstd_min = af.get_scalar("logstd_min");
    e.cfg_.logstd_max = af.get_scalar("logstd_max");
    e.obs_dim_ = int(af.get_scalar("obs_dim"));
    e.act_dim_ = int(af.get_scalar("act_dim"));
    e.in_mean_ = af.get_mat("in_mean");
    e.in_std_ = af.get_mat("in_std");
    e.target_mean_ = af.get_mat("target_mean");
    e.target_std_ = af.get_mat("target_std");
    for (auto v : af.get_i64("elites")) e.elites_.push_back(int(v));
    Mat hl = af.get_mat("holdout_losses");
    e.holdout_losses_.assign(hl.data(), hl.data() + hl.size());
    for (int m = 0; m < e.cfg_.n_members; ++m)
      e.members_.push_back(nn::get_mlp(af, "member" + std::to_string(m)));
    e.fitted_ = true;
    return e;
  }

 private:
  void require_fitted() const {
    if (!fitted_) throw StateError("dynamics: ensemble is not fitted");
  }

  void pick_elites() {
    std::vector<int> order(size_t(cfg_.n_members));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return holdout_losses_[size_t(a)] < holdout_losses_[size_t(b)]; });
    elites_.assign(order.begin(), order.begin() + cfg_.n_elites);
    std::sort(elites_.begin(), elites_.end());
  }

  // Gaussian negative log-likelihood of normalized targets.
  nn::Var tape_nll(nn::Tape& t, nn::Mlp& net, const Mat& zin, const Mat& zt) const {
    using nn::Var;
    Eigen::Index d = zt.cols();
    Var out = net.forward(t, t.input(zin));
    Var mean = t.slice_cols(out, 0, d);
    Var logstd = nn::soft_bound(t, t.slice_cols(out, d, d), cfg_.logstd_min, cfg_.logstd_max);
    Var inv_var = t.exp_(t.scale(logstd, -2.0));
    Var quad = t.mul(t.square(t.sub(t.input(zt), mean)), inv_var);
    return t.mean(t.add(t.scale(quad, 0.5), logstd));
  }
  double plain_nll(const nn::Mlp& net, const Mat& zin, const Mat& zt) const {
    Eigen::Index d = zt.cols();
    Mat out = net.forward_plain(zin);
    Mat mean = out.leftCols(d);
    Mat logstd = nn::soft_bound_plain(out.rightCols(d), cfg_.logstd_min, cfg_.logstd_max);
    Eigen::ArrayXXd quad = (zt - mean).array().square() * (-2.0 * logstd.array()).exp();
    return (0.5 * quad + logstd.array()).mean();
  }

  Config cfg_;
  bool fitted_ = false;
  int obs_dim_ = 0, act_dim_ = 0;
  Vec in_mean_, in_std_, target_mean_, target_std_;
  std::vector<nn::Mlp> members_;
  std::vector<double> holdout_losses_;
  std::vector<int> elites_;
};

}  // namespace gormpo
