#pragma once

#include "gormpo/density/estimator.hpp"
#include "gormpo/train_loop.hpp"

namespace gormpo::density {

// Diagonal-Gaussian VAE trained on the ELBO; inference uses the
// importance-weighted estimate log(1/K sum_k w_k) computed in log space.
// Log-variance heads are smoothly bounded so posterior stds stay positive.
class VaeEstimator final : public DensityEstimator {
 public:
  struct Params {
    Eigen::Index latent_dim = 16;
    std::vector<Eigen::Index> hidden = {256, 256};
    double beta = 1.0;
    int iwae_samples = 64;
  };

  VaeEstimator() : VaeEstimator(Params()) {}
  explicit VaeEstimator(Params p) : params_(p) {
    if (params_.latent_dim < 1) throw ParameterError("vae: latent_dim must be >= 1");
  }

  std::string family() const override { return "vae"; }
  const Params& params() const { return params_; }

  /// IWAE estimate with an explicit sample count (K >= 1).
  Vec iwae_log_prob(const Mat& x_normalized, int k_samples, RngStream& rng) const {
    require_fitted();
    if (k_samples < 1) throw ParameterError("vae: iwae sample count must be >= 1");
    Eigen::Index B = x_normalized.rows(), L = params_.latent_dim, D = input_dim_;
    auto [mu, logvar] = encode(x_normalized);
    Mat std_q = (0.5 * logvar.array()).exp();
    Mat logw(B, k_samples);
    for (int k = 0; k < k_samples; ++k) {
      Mat eps = rng.normal_mat(B, L);
      Mat z = mu + std_q.cwiseProduct(eps);
      auto [mu_x, logvar_x] = decode(z);
      // log p(x|z) + log p(z) - log q(z|x), all diagonal Gaussians
      Vec log_px = gauss_logpdf(x_normalized, mu_x, logvar_x);
      Vec log_pz = std_normal_logpdf_rows(z);
      Vec log_qz = gauss_logpdf(z, mu, logvar);
      logw.col(k) = log_px + log_pz - log_qz;
      (void)D;
    }
    Vec out(B);
    for (Eigen::Index i = 0; i < B; ++i)
      out(i) = logsumexp(logw.row(i).transpose()) - std::log(double(k_samples));
    return out;
  }

  /// Single-draw Monte-Carlo ELBO (identical to IWAE at K = 1 for the same draw).
  Vec elbo_sample(const Mat& x_normalized, RngStream& rng) const {
    return iwae_log_prob(x_normalized, 1, rng);
  }

  std::pair<Mat, Mat> encode(const Mat& x) const {
    Mat out = encoder_.forward_plain(x);
    Mat mu = out.leftCols(params_.latent_dim);
    Mat logvar = nn::soft_bound_plain(out.rightCols(params_.latent_dim), kLogVarLo, kLogVarHi);
    return {mu, logvar};
  }
  std::pair<Mat, Mat> decode(const Mat& z) const {
    Mat out = decoder_.forward_plain(z);
    Mat mu = out.leftCols(input_dim_);
    Mat logvar = nn::soft_bound_plain(out.rightCols(input_dim_), kLogVarLo, kLogVarHi);
    return {mu, logvar};
  }

  /// Diagonal-Gaussian log-density, one value per row.
  static Vec gauss_logpdf(const Mat& x, const Mat& mu, const Mat& logvar) {
    Eigen::ArrayXXd d2 = (x - mu).array().square() / logvar.array().exp();
    return (-0.5 * (d2 + logvar.array() + std::log(2.0 * M_PI))).rowwise().sum().matrix();
  }

  /// Training graph (exposed so gradients can be checked externally).
  nn::Var tape_neg_elbo(nn::Tape& t, const Mat& batch, RngStream& rng) const {
    using nn::Var;
    Eigen::Index L = params_.latent_dim, D = input_dim_;
    Var x = t.input(batch);
    Var enc = encoder_.forward(t, x);
    Var mu = t.slice_cols(enc, 0, L);
    Var logvar = nn::soft_bound(t, t.slice_cols(enc, L, L), kLogVarLo, kLogVarHi);
    Var std_q = t.exp_(t.scale(logvar, 0.5));
    Var eps = t.input(rng.normal_mat(batch.rows(), L));
    Var z = t.add(mu, t.mul(std_q, eps));
    Var dec = decoder_.forward(t, z);
    Var mu_x = t.slice_cols(dec, 0, D);
    Var logvar_x = nn::soft_bound(t, t.slice_cols(dec, D, D), kLogVarLo, kLogVarHi);
    // log p(x|z) per sample
    Var diff2 = t.square(t.sub(x, mu_x));
    Var quad = t.mul(diff2, t.exp_(t.neg(logvar_x)));
    Var log_px = t.scale(
        t.rowwise_sum(t.add_scalar(t.add(quad, logvar_x), std::log(2.0 * M_PI))), -0.5);
    // KL(q || N(0,I)) = -0.5 sum(1 + logvar - mu^2 - exp(logvar))
    Var kl_inner = t.sub(t.sub(t.add_scalar(logvar, 1.0), t.square(mu)), t.exp_(logvar));
    Var kl = t.scale(t.rowwise_sum(kl_inner), -0.5);
    return t.neg(t.mean(t.sub(log_px, t.scale(kl, params_.beta))));
  }

  std::vector<nn::Parameter*> all_params() {
    std::vector<nn::Parameter*> ps;
    for (auto* p : encoder_.params()) ps.push_back(p);
    for (auto* p : decoder_.params()) ps.push_back(p);
    return ps;
  }

 protected:
  void fit_normalized(const Mat& train, const Mat& val, const FitConfig& cfg) override {
    RngStream rng(cfg.seed);
    RngStream init_rng = rng.child("init");
    Eigen::Index D = train.cols(), L = params_.latent_dim;
    encoder_.init(D, params_.hidden, 2 * L, nn::Act::ReLU, init_rng);
    decoder_.init(L, params_.hidden, 2 * D, nn::Act::ReLU, init_rng);

    std::vector<nn::Parameter*> params = all_params();
    nn::Adam opt(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
    nn::TrainLoopConfig loop{cfg.max_epochs, cfg.batch_size, cfg.patience,
                             cfg.lr_factor,  cfg.lr_patience, cfg.seed, cfg.verbose};
    auto hist = nn::run_train_loop(
        train.rows(), loop, opt, params,
        [&](const std::vector<int64_t>& ids, RngStream& brng) {
          Mat batch(Eigen::Index(ids.size()), D);
          for (size_t i = 0; i < ids.size(); ++i) batch.row(Eigen::Index(i)) = train.row(ids[i]);
          nn::Tape t;
          nn::Var loss = tape_neg_elbo(t, batch, brng);
          t.backward(loss);
          return t.val(loss)(0, 0);
        },
        [&](RngStream& vrng) {
          // stochastic validation ELBO, fresh draws each epoch
          RngStream r = vrng.child("epoch");
          return -elbo_sample(val, r).mean();
        });
    curve_ = {hist.train_loss, hist.val_loss, hist.best_epoch};
  }

  Vec log_prob_normalized(const Mat& z, RngStream& rng) const override {
    return iwae_log_prob(z, params_.iwae_samples, rng);
  }

  void save_state(ArrayFile& af) const override {
    af.put_scalar("latent_dim", double(params_.latent_dim));
    af.put_scalar("beta", params_.beta);
    af.put_scalar("iwae_samples", double(params_.iwae_samples));
    nn::put_mlp(af, "encoder", encoder_);
    nn::put_mlp(af, "decoder", decoder_);
  }
  void load_state(const ArrayFile& af) override {
    params_.latent_dim = Eigen::Index(af.get_scalar("latent_dim"));
    params_.beta = af.get_scalar("beta");
    params_.iwae_samples = int(af.get_scalar("iwae_samples"));
    encoder_ = nn::get_mlp(af, "encoder");
    decoder_ = nn::get_mlp(af, "decoder");
  }

 private:
  static constexpr double kLogVarLo = -10.0, kLogVarHi = 4.0;

  Params params_;
  nn::Mlp encoder_, decoder_;
};

}  // namespace gormpo::density
