#pragma once

#include "gormpo/common.hpp"
#include "gormpo/envs.hpp"
#include "gormpo/io.hpp"

#include <string>
#include <utility>
#include <vector>

namespace gormpo {

inline double quantize_f32(double x) { return double(float(x)); }
inline void quantize_f32_inplace(Mat& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = quantize_f32(m(i, j));
}

/// Per-feature z-score statistics of a dataset split. Degenerate features
/// (std below 1e-8) get std 1 so normalization stays invertible.
struct NormStats {
  Vec obs_mean, obs_std;
  Vec act_mean, act_std;
  double reward_mean = 0.0, reward_std = 1.0;
};

inline Vec column_means(const Mat& x) { return x.colwise().mean(); }
inline Vec column_stds(const Mat& x, const Vec& mean) {
  Vec out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double s = (x.col(j).array() - mean(j)).square().sum() / double(x.rows());
    out(j) = std::sqrt(s);
    if (out(j) < 1e-8) out(j) = 1.0;
  }
  return out;
}

inline Mat normalize_rows(const Mat& x, const Vec& mean, const Vec& std) {
  return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}
inline Mat denormalize_rows(const Mat& z, const Vec& mean, const Vec& std) {
  return (z.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose();
}

// Columnar container of transitions with trajectory boundaries. Array fields
// are stored at f32 precision (the on-disk format), so save/load round trips
// are bit-identical.
struct OfflineDataset {
  Mat observations;       // N x d_s
  Mat actions;            // N x d_a
  Vec rewards;            // N
  Mat next_observations;  // N x d_s
  std::vector<uint8_t> terminals;       // N
  std::vector<int64_t> trajectory_starts;  // strictly increasing, starts at 0
  NormStats norm_stats;
  std::string env_id;

  int64_t size() const { return observations.rows(); }
  int obs_dim() const { return int(observations.cols()); }
  int act_dim() const { return int(actions.cols()); }
  int64_t n_trajectories() const { return int64_t(trajectory_starts.size()); }

  std::pair<int64_t, int64_t> trajectory_span(int64_t k) const {
    int64_t begin = trajectory_starts[size_t(k)];
    int64_t end = (size_t(k) + 1 < trajectory_starts.size()) ? trajectory_starts[size_t(k) + 1] : size();
    return {begin, end};
  }

  void validate() const {
    int64_t n = size();
    if (actions.rows() != n || rewards.size() != n || next_observations.rows() != n ||
        int64_t(terminals.size()) != n)
      throw ParameterError("OfflineDataset: field lengths disagree");
    if (trajectory_starts.empty() || trajectory_starts.front() != 0)
      throw ParameterError("OfflineDataset: trajectory_starts must begin at 0");
    for (size_t i = 1; i < trajectory_starts.size(); ++i)
      if (trajectory_starts[i] <= trajectory_starts[i - 1])
        throw ParameterError("OfflineDataset: trajectory_starts not strictly increasing");
    if (trajectory_starts.back() >= n) throw ParameterError("OfflineDataset: trajectory start past end");
  }

  void recompute_norm_stats() {
    norm_stats.obs_mean = column_means(observations);
    norm_stats.obs_std = column_stds(observations, norm_stats.obs_mean);
    norm_stats.act_mean = column_means(actions);
    norm_stats.act_std = column_stds(actions, norm_stats.act_mean);
    norm_stats.reward_mean = rewards.mean();
    double var = (rewards.array() - norm_stats.reward_mean).square().sum() / double(rewards.size());
    norm_stats.reward_std = std::sqrt(var);
    if (norm_stats.reward_std < 1e-8) norm_stats.reward_std = 1.0;
  }

  /// (next_observation, action) rows: the density model's input space.
  Mat density_pairs() const {
    Mat pairs(size(), obs_dim() + act_dim());
    pairs << next_observations, actions;
    return pairs;
  }
};

/// Roll out the scripted behavior policy for n_episodes and pack the result.
inline OfflineDataset collect_offline(Env& env, const BehaviorPolicy& behavior, int64_t n_episodes,
                                      uint64_t seed) {
  if (n_episodes < 1) throw ParameterError("collect_offline: n_episodes must be >= 1");
  RngStream root(seed);
  EnvInfo info = env.info();
  std::vector<Vec> obs_rows, act_rows, next_rows;
  std::vector<double> rewards;
  std::vector<uint8_t> terminals;
  std::vector<int64_t> starts;
  for (int64_t ep = 0; ep < n_episodes; ++ep) {
    RngStream ep_rng = root.child(uint64_t(ep));
    RngStream env_rng = ep_rng.child("env");
    RngStream pol_rng = ep_rng.child("policy");
    starts.push_back(int64_t(obs_rows.size()));
    Vec obs = env.reset(env_rng);
    bool done = false;
    while (!done) {
      Vec a = behavior(obs, pol_rng);
      StepResult sr = env.step(a, env_rng);
      obs_rows.push_back(obs);
      act_rows.push_back(a);
      next_rows.push_back(sr.obs);
      rewards.push_back(sr.reward);
      terminals.push_back(sr.done ? 1 : 0);
      obs = sr.obs;
      done = sr.done;
    }
  }
  OfflineDataset ds;
  int64_t n = int64_t(obs_rows.size());
  ds.observations = Mat(n, info.obs_dim);
  ds.actions = Mat(n, info.action_dim);
  ds.rewards = Vec(n);
  ds.next_observations = Mat(n, info.obs_dim);
  for (int64_t i = 0; i < n; ++i) {
    ds.observations.row(i) = obs_rows[size_t(i)].transpose();
    ds.actions.row(i) = act_rows[size_t(i)].transpose();
    ds.next_observations.row(i) = next_rows[size_t(i)].transpose();
    ds.rewards(i) = rewards[size_t(i)];
  }
  ds.terminals = std::move(terminals);
  ds.trajectory_starts = std::move(starts);
  ds.env_id = info.id;
  quantize_f32_inplace(ds.observations);
  quantize_f32_inplace(ds.actions);
  quantize_f32_inplace(ds.next_observations);
  for (int64_t i = 0; i < n; ++i) ds.rewards(i) = quantize_f32(ds.rewards(i));
  ds.recompute_norm_stats();
  ds.validate();
  return ds;
}

// ---- sparsification (unsafe-region trajectory dropping) ----

struct SparsifyRegion {
  double reward_min = 0.0, reward_max = 0.0;
  double anorm_min = 0.0, anorm_max = 0.0;
};

struct SparsifyReport {
  int64_t n_trajectories = 0;
  int64_t n_in_region = 0;
  int64_t n_dropped = 0;
  int64_t transitions_before = 0;
  int64_t transitions_after = 0;
  double dropped_traj_frac_of_full = 0.0;
  double dropped_transition_frac_of_full = 0.0;
  bool empty_region_warning = false;
};

inline OfflineDataset select_trajectories(const OfflineDataset& ds, const std::vector<int64_t>& keep) {
  OfflineDataset out;
  int64_t total = 0;
  for (int64_t k : keep) {
    auto [b, e] = ds.trajectory_span(k);
    total += e - b;
  }
  if (total == 0) throw ParameterError("select_trajectories: selection would produce an empty dataset");
  out.observations = Mat(total, ds.obs_dim());
  out.actions = Mat(total, ds.act_dim());
  out.rewards = Vec(total);
  out.next_observations = Mat(total, ds.obs_dim());
  out.terminals.resize(size_t(total));
  int64_t at = 0;
  for (int64_t k : keep) {
    auto [b, e] = ds.trajectory_span(k);
    int64_t len = e - b;
    out.trajectory_starts.push_back(at);
    out.observations.middleRows(at, len) = ds.observations.middleRows(b, len);
    out.actions.middleRows(at, len) = ds.actions.middleRows(b, len);
    out.rewards.segment(at, len) = ds.rewards.segment(b, len);
    out.next_observations.middleRows(at, len) = ds.next_observations.middleRows(b, len);
    for (int64_t i = 0; i < len; ++i) out.terminals[size_t(at + i)] = ds.terminals[size_t(b + i)];
    at += len;
  }
  out.env_id = ds.env_id;
  out.recompute_norm_stats();
  out.validate();
  return out;
}

// A trajectory is "in the region" if any of its steps has both the action
// L2-norm and the reward inside the box. Exactly round(drop_frac * n_in_region)
// such trajectories are removed, chosen uniformly at random.
inline OfflineDataset sparsify(const OfflineDataset& ds, const SparsifyRegion& region,
                               double drop_frac, uint64_t seed, SparsifyReport* report = nullptr) {
  if (drop_frac < 0.0 || drop_frac > 1.0) throw ParameterError("sparsify: drop_frac must be in [0,1]");
  if (region.reward_min > region.reward_max || region.anorm_min > region.anorm_max)
    throw ParameterError("sparsify: region bounds out of order");
  SparsifyReport rep;
  rep.n_trajectories = ds.n_trajectories();
  rep.transitions_before = ds.size();
  std::vector<int64_t> in_region, outside;
  for (int64_t k = 0; k < ds.n_trajectories(); ++k) {
    auto [b, e] = ds.trajectory_span(k);
    bool hit = false;
    for (int64_t i = b; i < e && !hit; ++i) {
      double anorm = ds.actions.row(i).norm();
      double r = ds.rewards(i);
      hit = anorm >= region.anorm_min && anorm <= region.anorm_max && r >= region.reward_min &&
            r <= region.reward_max;
    }
    (hit ? in_region : outside).push_back(k);
  }
  rep.n_in_region = int64_t(in_region.size());
  if (in_region.empty()) {
    rep.empty_region_warning = true;
    rep.transitions_after = ds.size();
    if (report) *report = rep;
    return ds;
  }
  rep.n_dropped = int64_t(std::llround(drop_frac * double(in_region.size())));
  RngStream rng(seed);
  auto perm = rng.permutation(int64_t(in_region.size()));
  std::vector<int64_t> keep(outside);
  for (int64_t i = rep.n_dropped; i < int64_t(in_region.size()); ++i)
    keep.push_back(in_region[size_t(perm[size_t(i)])]);
  std::sort(keep.begin(), keep.end());
  OfflineDataset out = select_trajectories(ds, keep);
  rep.transitions_after = out.size();
  rep.dropped_traj_frac_of_full = double(rep.n_dropped) / double(rep.n_trajectories);
  rep.dropped_transition_frac_of_full =
      double(rep.transitions_before - rep.transitions_after) / double(rep.transitions_before);
  if (report) *report = rep;
  return out;
}

// ---- OOD benchmark construction ----

// Labeled (next_observation, action) pairs: the untouched rows of the chosen
// trajectories (label ID) concatenated with copies shifted by per-element
// Gaussian noise N(mu, noise_std) (label OOD).
struct OODBenchmark {
  Mat inputs;                  // M x (d_s + d_a)
  std::vector<uint8_t> labels;  // 1 = OOD
  double shift_mu = 0.0;
  double noise_std = 0.1;

  int64_t size() const { return inputs.rows(); }

  void save(const std::string& path) const {
    ArrayFile af(1);
    af.put_f32("inputs", inputs);
    af.put_u8("labels", labels);
    af.put_scalar("shift_mu", shift_mu);
    af.put_scalar("noise_std", noise_std);
    af.save(path);
  }
  static OODBenchmark load(const std::string& path) {
    ArrayFile af = ArrayFile::load(path, 1);
    OODBenchmark b;
    b.inputs = af.get_mat("inputs");
    b.labels = af.get_u8("labels");
    b.shift_mu = af.get_scalar("shift_mu");
    b.noise_std = af.get_scalar("noise_std");
    return b;
  }
};

inline OODBenchmark make_ood(const OfflineDataset& ds, double mu, int64_t n_traj, uint64_t seed,
                             double noise_std = 0.1) {
  if (mu < 0.0) throw ParameterError("make_ood: mu must be >= 0");
  if (ds.n_trajectories() < n_traj)
    throw ParameterError("make_ood: dataset has fewer than " + std::to_string(n_traj) + " trajectories");
  RngStream rng(seed);
  auto perm = rng.permutation(ds.n_trajectories());
  std::vector<int64_t> rows;
  for (int64_t i = 0; i < n_traj; ++i) {
    auto [b, e] = ds.trajectory_span(perm[size_t(i)]);
    for (int64_t r = b; r < e; ++r) rows.push_back(r);
  }
  int64_t m = int64_t(rows.size());
  int d_s = ds.obs_dim(), d_a = ds.act_dim();
  OODBenchmark bench;
  bench.shift_mu = mu;
  bench.noise_std = noise_std;
  bench.inputs = Mat(2 * m, d_s + d_a);
  bench.labels.assign(size_t(2 * m), 0);
  for (int64_t i = 0; i < m; ++i) {
    bench.inputs.row(i).head(d_s) = ds.next_observations.row(rows[size_t(i)]);
    bench.inputs.row(i).tail(d_a) = ds.actions.row(rows[size_t(i)]);
  }
  for (int64_t i = 0; i < m; ++i) {
    Eigen::Index out = m + i;
    for (int j = 0; j < d_s + d_a; ++j)
      bench.inputs(out, j) = bench.inputs(i, j) + rng.normal(mu, noise_std);
    bench.labels[size_t(out)] = 1;
  }
  quantize_f32_inplace(bench.inputs);
  return bench;
}

// ---- normalization ----

// Z-scores features with the dataset's own statistics. ToyWean rewards are
// additionally z-scored and clipped to [-2, 2]; other environments keep raw
// rewards. The returned dataset carries the stats of the transform applied.
inline OfflineDataset normalize(const OfflineDataset& ds) {
  OfflineDataset out = ds;
  out.observations = normalize_rows(ds.observations, ds.norm_stats.obs_mean, ds.norm_stats.obs_std);
  out.next_observations =
      normalize_rows(ds.next_observations, ds.norm_stats.obs_mean, ds.norm_stats.obs_std);
  out.actions = normalize_rows(ds.actions, ds.norm_stats.act_mean, ds.norm_stats.act_std);
  if (ds.env_id == "toywean") {
    for (Eigen::Index i = 0; i < out.rewards.size(); ++i)
      out.rewards(i) = clamp((ds.rewards(i) - ds.norm_stats.reward_mean) / ds.norm_stats.reward_std,
                             -2.0, 2.0);
  }
  return out;
}

// ---- persistence (format version 1) ----

inline constexpr uint32_t kDatasetFormatVersion = 1;

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  ArrayFile af(kDatasetFormatVersion);
  af.put_f32("observations", ds.observations);
  af.put_f32("actions", ds.actions);
  af.put_f32("rewards", ds.rewards);
  af.put_f32("next_observations", ds.next_observations);
  af.put_u8("terminals", ds.terminals);
  af.put_i64("trajectory_starts", ds.trajectory_starts);
  af.put_f64("obs_mean", ds.norm_stats.obs_mean);
  af.put_f64("obs_std", ds.norm_stats.obs_std);
  af.put_f64("act_mean", ds.norm_stats.act_mean);
  af.put_f64("act_std", ds.norm_stats.act_std);
  af.put_scalar("reward_mean", ds.norm_stats.reward_mean);
  af.put_scalar("reward_std", ds.norm_stats.reward_std);
  af.put_string("env_id", ds.env_id);
  af.save(path);
}

inline OfflineDataset load_dataset(const std::string& path) {
  ArrayFile af = ArrayFile::load(path, kDatasetFormatVersion);
  OfflineDataset ds;
  ds.observations = af.get_mat("observations");
  ds.actions = af.get_mat("actions");
  ds.rewards = af.get_mat("rewards");
  ds.next_observations = af.get_mat("next_observations");
  ds.terminals = af.get_u8("terminals");
  ds.trajectory_starts = af.get_i64("trajectory_starts");
  ds.norm_stats.obs_mean = af.get_mat("obs_mean");
  ds.norm_stats.obs_std = af.get_mat("obs_std");
  ds.norm_stats.act_mean = af.get_mat("act_mean");
  ds.norm_stats.act_std = af.get_mat("act_std");
  ds.norm_stats.reward_mean = af.get_scalar("reward_mean");
  ds.norm_stats.reward_std = af.get_scalar("reward_std");
  ds.env_id = af.get_string("env_id");
  ds.validate();
  return ds;
}

/// Trajectory-level train/validation split (no leakage across the boundary).
inline std::pair<OfflineDataset, OfflineDataset> split_train_val(const OfflineDataset& ds,
                                                                 double val_frac, uint64_t seed) {
  int64_t n = ds.n_trajectories();
  int64_t n_val = std::max<int64_t>(1, int64_t(std::llround(val_frac * double(n))));
  if (n_val >= n) throw ParameterError("split_train_val: validation fraction leaves no training data");
  RngStream rng(seed);
  auto perm = rng.permutation(n);
  std::vector<int64_t> val_ids(perm.begin(), perm.begin() + n_val);
  std::vector<int64_t> train_ids(perm.begin() + n_val, perm.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(train_ids.begin(), train_ids.end());
  return {select_trajectories(ds, train_ids), select_trajectories(ds, val_ids)};
}

}  // namespace gormpo
