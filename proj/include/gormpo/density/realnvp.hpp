#pragma once

#include "gormpo/density/estimator.hpp"
#include "gormpo/train_loop.hpp"

namespace gormpo::density {

// RealNVP with affine coupling layers and alternating even/odd feature masks.
// Each coupling net maps the masked input to (scale, shift); the scale is
// stabilized by tanh, and the final linear layers start at zero so an
// untrained flow is exactly the identity.
class RealNvpEstimator final : public DensityEstimator {
 public:
  struct Params {
    int n_coupling = 6;
    std::vector<Eigen::Index> hidden = {256, 256};
  };

  RealNvpEstimator() : RealNvpEstimator(Params()) {}
  explicit RealNvpEstimator(Params p) : params_(p) {
    if (params_.n_coupling < 1) throw ParameterError("realnvp: need at least one coupling layer");
  }

  std::string family() const override { return "realnvp"; }
  const Params& params() const { return params_; }

  /// Initialize an identity flow without fitting (for frozen-flow checks).
  void init_identity(int dim, uint64_t seed = 0) {
    input_dim_ = dim;
    pair_mean_ = Vec::Zero(dim);
    pair_std_ = Vec::Ones(dim);
    RngStream rng(seed);
    build_nets(dim, rng);
    fitted_ = true;
  }

  /// x -> z with the accumulated log|det J|; exact inverse of inverse_map.
  std::pair<Mat, Vec> forward_map(const Mat& x) const {
    require_fitted();
    Mat h = x;
    Vec logdet = Vec::Zero(x.rows());
    for (size_t l = 0; l < nets_.size(); ++l) {
      Mat masked = h.array().rowwise() * masks_[l].transpose().array();
      Mat st = nets_[l].forward_plain(masked);
      Mat s = st.leftCols(input_dim_).array().tanh();
      Mat shift = st.rightCols(input_dim_);
      Vec inv_mask = (1.0 - masks_[l].array()).matrix();
      Mat s_m = s.array().rowwise() * inv_mask.transpose().array();
      Mat t_m = shift.array().rowwise() * inv_mask.transpose().array();
      h = masked + ((h.cwiseProduct(s_m.array().exp().matrix()) + t_m).array().rowwise() *
                    inv_mask.transpose().array())
                       .matrix();
      if (!h.allFinite())
        throw NumericError("realnvp: non-finite activations in coupling layer " + std::to_string(l));
      logdet += s_m.rowwise().sum();
    }
    return {h, logdet};
  }

  /// z -> x with the inverse log|det J|; exact inverse of forward_map up to
  /// float roundoff (the two log-determinants cancel).
  std::pair<Mat, Vec> inverse_map(const Mat& z) const {
    require_fitted();
    Mat h = z;
    Vec logdet = Vec::Zero(z.rows());
    for (size_t li = nets_.size(); li-- > 0;) {
      Mat masked = h.array().rowwise() * masks_[li].transpose().array();
      Mat st = nets_[li].forward_plain(masked);
      Mat s = st.leftCols(input_dim_).array().tanh();
      Mat shift = st.rightCols(input_dim_);
      Vec inv_mask = (1.0 - masks_[li].array()).matrix();
      Mat s_m = s.array().rowwise() * inv_mask.transpose().array();
      Mat t_m = shift.array().rowwise() * inv_mask.transpose().array();
      h = masked + (((h - t_m).cwiseProduct((-s_m).array().exp().matrix())).array().rowwise() *
                    inv_mask.transpose().array())
                       .matrix();
      if (!h.allFinite())
        throw NumericError("realnvp: non-finite activations in coupling layer " + std::to_string(li));
      logdet -= s_m.rowwise().sum();
    }
    return {h, logdet};
  }

  Vec log_prob_plain(const Mat& x_normalized) const {
    auto [z, logdet] = forward_map(x_normalized);
    return std_normal_logpdf_rows(z) + logdet;
  }

  /// Training graph (exposed so gradients can be checked externally).
  nn::Var tape_log_prob(nn::Tape& t, const Mat& x) const {
    using nn::Var;
    Eigen::Index D = input_dim_;
    Var h = t.input(x);
    Var logdet = t.input(Mat::Zero(x.rows(), 1));
    for (size_t l = 0; l < nets_.size(); ++l) {
      Var mask = t.input(masks_[l].transpose());
      Var inv_mask = t.input((1.0 - masks_[l].array()).matrix().transpose());
      Var masked = t.mul_rowvec(h, mask);
      Var st = nets_[l].forward(t, masked);
      Var s_m = t.mul_rowvec(t.tanh_(t.slice_cols(st, 0, D)), inv_mask);
      Var t_m = t.mul_rowvec(t.slice_cols(st, D, D), inv_mask);
      h = t.add(masked, t.mul_rowvec(t.add(t.mul(h, t.exp_(s_m)), t_m), inv_mask));
      logdet = t.add(logdet, t.rowwise_sum(s_m));
    }
    double c = -0.5 * std::log(2.0 * M_PI) * double(D);
    Var base = t.add_scalar(t.scale(t.rowwise_sum(t.square(h)), -0.5), c);
    return t.add(base, logdet);
  }

  std::vector<nn::Parameter*> all_params() {
    std::vector<nn::Parameter*> ps;
    for (auto& n : nets_)
      for (auto* p : n.params()) ps.push_back(p);
    return ps;
  }

 protected:
  void fit_normalized(const Mat& train, const Mat& val, const FitConfig& cfg) override {
    RngStream rng(cfg.seed);
    RngStream init_rng = rng.child("init");
    build_nets(int(train.cols()), init_rng);

    std::vector<nn::Parameter*> params = all_params();
    nn::Adam opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    nn::TrainLoopConfig loop{cfg.max_epochs, cfg.batch_size, cfg.patience,
                             cfg.lr_factor,  cfg.lr_patience, cfg.seed, cfg.verbose};
    auto hist = nn::run_train_loop(
        train.rows(), loop, opt, params,
        [&](const std::vector<int64_t>& ids, RngStream&) {
          Mat batch(Eigen::Index(ids.size()), train.cols());
          for (size_t i = 0; i < ids.size(); ++i) batch.row(Eigen::Index(i)) = train.row(ids[i]);
          nn::Tape t;
          nn::Var lp = tape_log_prob(t, batch);
          nn::Var loss = t.neg(t.mean(lp));
          t.backward(loss);
          return t.val(loss)(0, 0);
        },
        [&](RngStream&) { return -log_prob_plain(val).mean(); });
    curve_ = {hist.train_loss, hist.val_loss, hist.best_epoch};
  }

  Vec log_prob_normalized(const Mat& z, RngStream& /*rng*/) const override {
    return log_prob_plain(z);
  }

  void save_state(ArrayFile& af) const override {
    af.put_scalar("n_coupling", double(params_.n_coupling));
    for (size_t l = 0; l < nets_.size(); ++l)
      nn::put_mlp(af, "coupling" + std::to_string(l), nets_[l]);
  }
  void load_state(const ArrayFile& af) override {
    params_.n_coupling = int(af.get_scalar("n_coupling"));
    nets_.clear();
    for (int l = 0; l < params_.n_coupling; ++l)
      nets_.push_back(nn::get_mlp(af, "coupling" + std::to_string(l)));
    build_masks(input_dim_);
  }

 private:
  void build_masks(int dim) {
    masks_.clear();
    for (int l = 0; l < params_.n_coupling; ++l) {
      Vec m(dim);
      for (int j = 0; j < dim; ++j) m(j) = ((j + l) % 2 == 0) ? 1.0 : 0.0;
      masks_.push_back(m);
    }
  }
  void build_nets(int dim, RngStream& rng) {
    build_masks(dim);
    nets_.clear();
    for (int l = 0; l < params_.n_coupling; ++l) {
      nn::Mlp net;
      net.init(dim, params_.hidden, 2 * dim, nn::Act::ReLU, rng, /*zero_init_last=*/true);
      nets_.push_back(std::move(net));
    }
  }
  Params params_;
  std::vector<nn::Mlp> nets_;
  std::vector<Vec> masks_;
};

}  // namespace gormpo::density
