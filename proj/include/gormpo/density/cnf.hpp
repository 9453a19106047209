#pragma once

#include "gormpo/density/estimator.hpp"
#include "gormpo/train_loop.hpp"

namespace gormpo::density {

// Continuous normalizing flow: a time-conditioned velocity field integrated
// with fixed-step RK4, log-density from the instantaneous change of variables.
// The divergence is computed exactly in one pass through the two-hidden-layer
// field via tr(J) = rowsum((A1' Q) .* A2') with Q = W2 .* (W3 W1z)^T, where
// A1', A2' are the activation derivatives; above exact_trace_max_dim it falls
// back to Hutchinson probes. Training maximizes likelihood through the
// discretized integration. A zero-initialized field is the identity flow.
class CnfEstimator final : public DensityEstimator {
 public:
  struct Params {
    std::vector<Eigen::Index> hidden = {512, 512};  // exactly two hidden layers
    int rk4_steps = 20;
    int exact_trace_max_dim = 32;
    int hutchinson_probes = 4;
  };

  CnfEstimator() : CnfEstimator(Params()) {}
  explicit CnfEstimator(Params p) : params_(p) {
    if (params_.hidden.size() != 2)
      throw ParameterError("cnf: the exact trace requires exactly two hidden layers");
    if (params_.rk4_steps < 1) throw ParameterError("cnf: rk4_steps must be >= 1");
  }

  std::string family() const override { return "cnf"; }
  const Params& params() const { return params_; }

  /// Initialize a zero velocity field without fitting (frozen-flow checks).
  void init_zero_field(int dim, uint64_t seed = 0) {
    input_dim_ = dim;
    pair_mean_ = Vec::Zero(dim);
    pair_std_ = Vec::Ones(dim);
    RngStream rng(seed);
    field_.init(dim + 1, params_.hidden, dim, nn::Act::SiLU, rng, /*zero_init_last=*/true);
    fitted_ = true;
  }

  /// Log-density of normalized inputs with an explicit step count.
  Vec log_prob_plain(const Mat& x_normalized, int steps, RngStream* rng = nullptr) const {
    require_fitted();
    Eigen::Index B = x_normalized.rows(), D = x_normalized.cols();
    Mat probes;
    if (D > params_.exact_trace_max_dim) {
      if (!rng) throw ParameterError("cnf: Hutchinson trace needs a seed-stream");
      probes = rademacher(*rng, B * params_.hutchinson_probes, D);
    }
    Mat z = x_normalized;
    Vec ell = Vec::Zero(B);
    double h = -1.0 / double(steps);
    for (int i = 0; i < steps; ++i) {
      double tau = 1.0 + double(i) * h;
      auto [k1, t1] = field_with_trace(z, tau, probes);
      auto [k2, t2] = field_with_trace(z + 0.5 * h * k1, tau + 0.5 * h, probes);
      auto [k3, t3] = field_with_trace(z + 0.5 * h * k2, tau + 0.5 * h, probes);
      auto [k4, t4] = field_with_trace(z + h * k3, tau + h, probes);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      ell += (h / 6.0) * (t1 + 2.0 * t2 + 2.0 * t3 + t4);
      if (!z.allFinite())
        throw NumericError("cnf: non-finite trajectory at integration step " + std::to_string(i));
    }
    return std_normal_logpdf_rows(z) + ell;
  }

  // Pure state transport (no trace): forward maps base samples to data space
  // (tau 0 -> 1), inverse maps data back to the base (tau 1 -> 0).
  Mat transform(const Mat& pts, bool forward, int steps = 0) const {
    require_fitted();
    if (steps <= 0) steps = params_.rk4_steps;
    double t0 = forward ? 0.0 : 1.0;
    double h = (forward ? 1.0 : -1.0) / double(steps);
    Mat z = pts;
    for (int i = 0; i < steps; ++i) {
      double tau = t0 + double(i) * h;
      Mat k1 = velocity(z, tau);
      Mat k2 = velocity(z + 0.5 * h * k1, tau + 0.5 * h);
      Mat k3 = velocity(z + 0.5 * h * k2, tau + 0.5 * h);
      Mat k4 = velocity(z + h * k3, tau + h);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!z.allFinite())
        throw NumericError("cnf: non-finite trajectory at integration step " + std::to_string(i));
    }
    return z;
  }

  int rk4_steps() const { return params_.rk4_steps; }

  /// Velocity field at (z, tau) in normalized coordinates.
  Mat velocity_at(const Mat& z, double tau) const {
    require_fitted();
    return velocity(z, tau);
  }
  /// Divergence (Jacobian trace) of the field at (z, tau); rng only needed
  /// on the Hutchinson path.
  Vec divergence_at(const Mat& z, double tau, RngStream* rng = nullptr) const {
    require_fitted();
    Mat probes;
    if (z.cols() > params_.exact_trace_max_dim) {
      if (!rng) throw ParameterError("cnf: Hutchinson trace needs a seed-stream");
      probes = rademacher(*rng, z.rows() * params_.hutchinson_probes, z.cols());
    }
    return field_with_trace(z, tau, probes).second;
  }

  /// Training graph (exposed so gradients can be checked externally).
  nn::Var tape_log_prob(nn::Tape& t, const Mat& batch, RngStream& rng) const {
    using nn::Var;
    Eigen::Index B = batch.rows(), D = batch.cols();
    Mat probes;
    if (D > params_.exact_trace_max_dim) probes = rademacher(rng, B * params_.hutchinson_probes, D);
    Var z = t.input(batch);
    Var ell = t.input(Mat::Zero(B, 1));
    double h = -1.0 / double(params_.rk4_steps);
    for (int i = 0; i < params_.rk4_steps; ++i) {
      double tau = 1.0 + double(i) * h;
      auto [k1, t1] = tape_field_with_trace(t, z, tau, B, probes);
      auto [k2, t2] = tape_field_with_trace(t, t.add(z, t.scale(k1, 0.5 * h)), tau + 0.5 * h, B, probes);
      auto [k3, t3] = tape_field_with_trace(t, t.add(z, t.scale(k2, 0.5 * h)), tau + 0.5 * h, B, probes);
      auto [k4, t4] = tape_field_with_trace(t, t.add(z, t.scale(k3, h)), tau + h, B, probes);
      Var zsum = t.add(t.add(k1, t.scale(t.add(k2, k3), 2.0)), k4);
      z = t.add(z, t.scale(zsum, h / 6.0));
      Var tsum = t.add(t.add(t1, t.scale(t.add(t2, t3), 2.0)), t4);
      ell = t.add(ell, t.scale(tsum, h / 6.0));
    }
    double c = -0.5 * std::log(2.0 * M_PI) * double(D);
    Var base = t.add_scalar(t.scale(t.rowwise_sum(t.square(z)), -0.5), c);
    return t.add(base, ell);
  }

  std::vector<nn::Parameter*> field_params() { return field_.params(); }

 protected:
  void fit_normalized(const Mat& train, const Mat& val, const FitConfig& cfg) override {
    RngStream rng(cfg.seed);
    RngStream init_rng = rng.child("init");
    field_.init(train.cols() + 1, params_.hidden, train.cols(), nn::Act::SiLU, init_rng,
                /*zero_init_last=*/true);
    auto params = field_.params();
    nn::Adam opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    nn::TrainLoopConfig loop{cfg.max_epochs, cfg.batch_size, cfg.patience,
                             cfg.lr_factor,  cfg.lr_patience, cfg.seed, cfg.verbose};
    auto hist = nn::run_train_loop(
        train.rows(), loop, opt, params,
        [&](const std::vector<int64_t>& ids, RngStream& brng) {
          Mat batch(Eigen::Index(ids.size()), train.cols());
          for (size_t i = 0; i < ids.size(); ++i) batch.row(Eigen::Index(i)) = train.row(ids[i]);
          nn::Tape t;
          nn::Var lp = tape_log_prob(t, batch, brng);
          nn::Var loss = t.neg(t.mean(lp));
          t.backward(loss);
          return t.val(loss)(0, 0);
        },
        [&](RngStream& vrng) {
          RngStream r = vrng.child("epoch");
          return -log_prob_plain(val, params_.rk4_steps, &r).mean();
        });
    curve_ = {hist.train_loss, hist.val_loss, hist.best_epoch};
  }

  Vec log_prob_normalized(const Mat& z, RngStream& rng) const override {
    return log_prob_plain(z, params_.rk4_steps, &rng);
  }

  void save_state(ArrayFile& af) const override {
    af.put_scalar("rk4_steps", double(params_.rk4_steps));
    af.put_scalar("hutchinson_probes", double(params_.hutchinson_probes));
    af.put_scalar("exact_trace_max_dim", double(params_.exact_trace_max_dim));
    nn::put_mlp(af, "field", field_);
  }
  void load_state(const ArrayFile& af) override {
    params_.rk4_steps = int(af.get_scalar("rk4_steps"));
    params_.hutchinson_probes = int(af.get_scalar("hutchinson_probes"));
    params_.exact_trace_max_dim = int(af.get_scalar("exact_trace_max_dim"));
    field_ = nn::get_mlp(af, "field");
  }

 private:
  static Mat rademacher(RngStream& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return m;
  }

  Mat with_time(const Mat& z, double tau) const {
    Mat x(z.rows(), z.cols() + 1);
    x << z, Mat::Constant(z.rows(), 1, tau);
    return x;
  }

  Mat velocity(const Mat& z, double tau) const { return field_.forward_plain(with_time(z, tau)); }

  static Eigen::ArrayXXd silu_plain(const Eigen::ArrayXXd& x) {
    return x / (1.0 + (-x).exp());
  }
  static Eigen::ArrayXXd silu_deriv_plain(const Eigen::ArrayXXd& x) {
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
    return s * (1.0 + x * (1.0 - s));
  }

  std::pair<Mat, Vec> field_with_trace(const Mat& z, double tau, const Mat& probes) const {
    Eigen::Index D = z.cols(), B = z.rows();
    const Mat& W1 = field_.layers[0].weight.value;
    const Mat& W2 = field_.layers[1].weight.value;
    const Mat& W3 = field_.layers[2].weight.value;
    Mat x = with_time(z, tau);
    Mat pre1 = (x * W1).rowwise() + field_.layers[0].bias.value.row(0);
    Mat a1 = silu_plain(pre1.array());
    Mat pre2 = (a1 * W2).rowwise() + field_.layers[1].bias.value.row(0);
    Mat a2 = silu_plain(pre2.array());
    Mat v = (a2 * W3).rowwise() + field_.layers[2].bias.value.row(0);
    Mat d1 = silu_deriv_plain(pre1.array());
    Mat d2 = silu_deriv_plain(pre2.array());
    Mat w1z = W1.topRows(D);  // D x H1 block acting on z
    Vec tr(B);
    if (D <= params_.exact_trace_max_dim) {
      Mat q = W2.cwiseProduct((W3 * w1z).transpose());  // H1 x H2
      tr = ((d1 * q).cwiseProduct(d2)).rowwise().sum();
    } else {
      tr.setZero();
      int P = params_.hutchinson_probes;
      for (int p = 0; p < P; ++p) {
        Mat vpr = probes.middleRows(Eigen::Index(p) * B, B);  // B x D
        Mat mv = (vpr * w1z).cwiseProduct(d1);                // B x H1
        Mat wv = (vpr * W3.transpose()).cwiseProduct(d2);     // B x H2
        tr += ((mv * W2).cwiseProduct(wv)).rowwise().sum();
      }
      tr /= double(P);
    }
    return {v, tr};
  }

  // Tape analogue of field_with_trace, for likelihood training.
  std::pair<nn::Var, nn::Var> tape_field_with_trace(nn::Tape& t, nn::Var z, double tau,
                                                    Eigen::Index B, const Mat& probes) const {
    using nn::Var;
    Eigen::Index D = input_dim_;
    auto& l0 = const_cast<nn::Linear&>(field_.layers[0]);
    auto& l1 = const_cast<nn::Linear&>(field_.layers[1]);
    auto& l2 = const_cast<nn::Linear&>(field_.layers[2]);
    Var w1 = t.leaf(l0.weight), w2 = t.leaf(l1.weight), w3 = t.leaf(l2.weight);
    Var x = t.concat_cols(z, t.input(Mat::Constant(B, 1, tau)));
    Var pre1 = t.add_rowvec(t.matmul(x, w1), t.leaf(l0.bias));
    Var a1 = t.silu(pre1);
    Var pre2 = t.add_rowvec(t.matmul(a1, w2), t.leaf(l1.bias));
    Var a2 = t.silu(pre2);
    Var v = t.add_rowvec(t.matmul(a2, w3), t.leaf(l2.bias));
    Var d1 = t.silu_deriv(pre1);
    Var d2 = t.silu_deriv(pre2);
    Var w1z = t.slice_rows(w1, 0, D);
    Var tr{-1};
    if (D <= params_.exact_trace_max_dim) {
      Var q = t.mul(w2, t.transpose(t.matmul(w3, w1z)));
      tr = t.rowwise_sum(t.mul(t.matmul(d1, q), d2));
    } else {
      for (int p = 0; p < params_.hutchinson_probes; ++p) {
        Var vpr = t.input(probes.middleRows(Eigen::Index(p) * B, B));
        Var mv = t.mul(t.matmul(vpr, w1z), d1);
        Var wv = t.mul(t.matmul(vpr, t.transpose(w3)), d2);
        Var est = t.rowwise_sum(t.mul(t.matmul(mv, w2), wv));
        tr = p == 0 ? est : t.add(tr, est);
      }
      tr = t.scale(tr, 1.0 / double(params_.hutchinson_probes));
    }
    return {v, tr};
  }

  Params params_;
  nn::Mlp field_;
};

}  // namespace gormpo::density
