#pragma once

#include "gormpo/nn.hpp"

#include <functional>
#include <vector>

namespace gormpo::nn {

struct TrainLoopConfig {
  int max_epochs = 100;
  int64_t batch_size = 256;
  int patience = 0;       // early stopping on the validation objective; 0 = off
  double lr_factor = 0.5; // ReduceLROnPlateau
  int lr_patience = 0;    // 0 = no scheduler
  uint64_t seed = 0;
  bool verbose = false;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
};

// Minibatch loop with early stopping, plateau LR decay, and best-epoch
// restore. train_batch must zero grads, run backward, and return the batch
// loss; the loop owns the optimizer step. A non-finite loss restores the last
// good parameters and raises TrainingError.
inline TrainHistory run_train_loop(
    int64_t n_train, const TrainLoopConfig& cfg, Adam& opt,
    const std::vector<Parameter*>& params,
    const std::function<double(const std::vector<int64_t>&, RngStream&)>& train_batch,
    const std::function<double(RngStream&)>& val_objective) {
  TrainHistory hist;
  RngStream rng(cfg.seed);
  RngStream shuffle_rng = rng.child("shuffle");
  RngStream batch_rng = rng.child("batch");
  RngStream val_rng = rng.child("val");

  std::vector<Mat> best = snapshot(params);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0, since_plateau = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto perm = shuffle_rng.permutation(n_train);
    double epoch_loss = 0.0;
    int64_t n_batches = 0;
    for (int64_t at = 0; at < n_train; at += cfg.batch_size) {
      int64_t len = std::min(cfg.batch_size, n_train - at);
      std::vector<int64_t> ids(perm.begin() + at, perm.begin() + at + len);
      opt.zero_grad();
      double loss = train_batch(ids, batch_rng);
      if (!std::isfinite(loss)) {
        restore(params, best);
        throw TrainingError("training loss became non-finite (last good checkpoint restored)");
      }
      opt.step();
      epoch_loss += loss;
      ++n_batches;
    }
    hist.train_loss.push_back(epoch_loss / double(std::max<int64_t>(n_batches, 1)));

    double val = val_objective(val_rng);
    if (!std::isfinite(val)) {
      restore(params, best);
      throw TrainingError("validation objective became non-finite (last good checkpoint restored)");
    }
    hist.val_loss.push_back(val);
    if (val < best_val - 1e-9) {
      best_val = val;
      best = snapshot(params);
      hist.best_epoch = epoch;
      since_best = 0;
      since_plateau = 0;
    } else {
      ++since_best;
      ++since_plateau;
    }
    if (cfg.lr_patience > 0 && since_plateau >= cfg.lr_patience) {
      opt.set_lr(opt.lr() * cfg.lr_factor);
      since_plateau = 0;
    }
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  restore(params, best);
  return hist;
}

/// Two-softplus smooth clamp: identity well inside (lo, hi), saturating at
/// the bounds. Used for log-std heads.
inline Var soft_bound(Tape& t, Var x, double lo, double hi) {
  Var upper = t.add_scalar(t.neg(t.softplus(t.add_scalar(t.neg(x), hi))), hi);
  return t.add_scalar(t.softplus(t.add_scalar(upper, -lo)), lo);
}
inline Mat soft_bound_plain(const Mat& x, double lo, double hi) {
  auto sp = [](const Eigen::ArrayXXd& v) { return v.max(0.0) + (-v.abs()).exp().log1p(); };
  Eigen::ArrayXXd upper = hi - sp(hi - x.array());
  return lo + sp(upper - lo);
}

}  // namespace gormpo::nn
