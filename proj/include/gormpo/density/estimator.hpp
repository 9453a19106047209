#pragma once

#include "gormpo/common.hpp"
#include "gormpo/dataset.hpp"
#include "gormpo/io.hpp"

#include <memory>
#include <string>
#include <vector>

namespace gormpo::density {

struct FitConfig {
  int max_epochs = 100;
  int batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int patience = 15;      // early stopping on validation objective; 0 disables
  double lr_factor = 0.5; // ReduceLROnPlateau
  int lr_patience = 7;
  uint64_t seed = 0;
  bool verbose = false;
};

struct TrainCurve {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
};

// Common face of the five estimator families: fit on (s', a) pairs, score
// log-density, carry a calibrated threshold tau. Inputs are raw pairs; each
// model z-scores internally with statistics frozen from its training split,
// and reports densities in raw units (the normalization Jacobian is folded in).
class DensityEstimator {
 public:
  virtual ~DensityEstimator() = default;

  virtual std::string family() const = 0;

  void fit(const Mat& train_pairs, const Mat& val_pairs, const FitConfig& cfg = {}) {
    if (train_pairs.rows() < 1) throw ParameterError("fit: empty training set");
    if (val_pairs.cols() != train_pairs.cols())
      throw ParameterError("fit: train/val dimension mismatch");
    input_dim_ = int(train_pairs.cols());
    pair_mean_ = column_means(train_pairs);
    pair_std_ = column_stds(train_pairs, pair_mean_);
    fitted_ = true;  // validation callbacks may score during training
    try {
      fit_normalized(normalize_rows(train_pairs, pair_mean_, pair_std_),
                     normalize_rows(val_pairs, pair_mean_, pair_std_), cfg);
    } catch (...) {
      fitted_ = false;
      throw;
    }
  }

  /// Log-density of each row, floored at kLogDensityFloor on underflow.
  Vec log_prob_batch(const Mat& x, RngStream& rng) const {
    require_fitted();
    if (x.cols() != input_dim_) throw ParameterError("log_prob: dimension mismatch");
    Vec lp = log_prob_normalized(normalize_rows(x, pair_mean_, pair_std_), rng);
    double jac = -pair_std_.array().log().sum();
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      if (std::isnan(lp(i))) throw NumericError(family() + ": NaN log-density");
      lp(i) = std::max(lp(i) + jac, kLogDensityFloor);
    }
    return lp;
  }
  double log_prob(const Vec& x, RngStream& rng) const {
    return log_prob_batch(x.transpose(), rng)(0);
  }

  bool fitted() const { return fitted_; }
  int input_dim() const { return input_dim_; }
  const TrainCurve& train_curve() const { return curve_; }
  /// Fit-time z-score statistics (normalization is frozen at fit).
  const Vec& reference_mean() const { return pair_mean_; }
  const Vec& reference_std() const { return pair_std_; }

  double threshold() const {
    if (!std::isfinite(tau_)) throw StateError(family() + ": threshold not calibrated");
    return tau_;
  }
  bool has_threshold() const { return std::isfinite(tau_); }
  /// Manual override (ablations only).
  void set_threshold(double tau) { tau_ = tau; }

  // tau = 1st percentile of validation log-densities (linear interpolation).
  // Fewer than 100 points is allowed but flagged via the return value.
  bool calibrate_threshold(const Mat& val_pairs, RngStream& rng, double pct = 1.0) {
    require_fitted();
    Vec lp = log_prob_batch(val_pairs, rng);
    std::vector<double> scores(lp.data(), lp.data() + lp.size());
    tau_ = percentile(scores, pct);
    return val_pairs.rows() >= 100;
  }

  void save(const std::string& path) const {
    require_fitted();
    ArrayFile af(1);
    af.put_string("family", family());
    af.put_scalar("input_dim", double(input_dim_));
    af.put_scalar("tau", tau_);
    af.put_f64("pair_mean", pair_mean_);
    af.put_f64("pair_std", pair_std_);
    save_state(af);
    af.save(path);
  }

 protected:
  virtual void fit_normalized(const Mat& train, const Mat& val, const FitConfig& cfg) = 0;
  virtual Vec log_prob_normalized(const Mat& z, RngStream& rng) const = 0;
  virtual void save_state(ArrayFile& af) const = 0;
  virtual void load_state(const ArrayFile& af) = 0;

  void require_fitted() const {
    if (!fitted_) throw StateError(family() + ": model is not fitted");
  }
  void load_common(const ArrayFile& af) {
    input_dim_ = int(af.get_scalar("input_dim"));
    tau_ = af.get_scalar("tau");
    pair_mean_ = af.get_mat("pair_mean");
    pair_std_ = af.get_mat("pair_std");
    load_state(af);
    fitted_ = true;
  }

  bool fitted_ = false;
  int input_dim_ = 0;
  double tau_ = std::numeric_limits<double>::quiet_NaN();
  Vec pair_mean_, pair_std_;
  TrainCurve curve_;

  friend std::unique_ptr<DensityEstimator> load_density(const std::string& path);
};

/// log N(x; 0, I) summed over the row entries, one value per row.
inline Vec std_normal_logpdf_rows(const Mat& x) {
  double c = -0.5 * std::log(2.0 * M_PI) * double(x.cols());
  return (c - 0.5 * x.array().square().rowwise().sum()).matrix();
}

}  // namespace gormpo::density
