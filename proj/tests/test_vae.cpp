#include "gormpo/density/all.hpp"

#include <cstdio>
#include <filesystem>
#include "helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;
using namespace gormpo::density;

namespace {
VaeEstimator small_trained_vae(uint64_t seed, Eigen::Index d = 4) {
  RngStream rng(seed);
  Mat train = rng.normal_mat(3000, d);
  Mat val = rng.normal_mat(500, d);
  VaeEstimator::Params p;
  p.latent_dim = 4;
  p.hidden = {64, 64};
  VaeEstimator vae(p);
  FitConfig cfg = default_fit_config("vae");
  cfg.max_epochs = 60;
  cfg.seed = seed;
  vae.fit(train, val, cfg);
  return vae;
}
}  // namespace

TEST_CASE("iwae at K = 1 equals a single-sample ELBO draw") {
  auto vae = small_trained_vae(1);
  RngStream qrng(2);
  Mat x = qrng.normal_mat(20, 4);
  Mat xn = normalize_rows(x, vae.reference_mean(), vae.reference_std());
  RngStream r1(3), r2(3);
  Vec iwae1 = vae.iwae_log_prob(xn, 1, r1);
  Vec elbo = vae.elbo_sample(xn, r2);
  REQUIRE((iwae1 - elbo).cwiseAbs().maxCoeff() == 0.0);

  // independent oracle: recompute log w from encoder/decoder heads with the
  // exact same latent draw
  RngStream r3(3);
  auto [mu, logvar] = vae.encode(xn);
  Mat eps = r3.normal_mat(20, 4);
  Mat z = mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
  auto [mu_x, logvar_x] = vae.decode(z);
  Vec logw = VaeEstimator::gauss_logpdf(xn, mu_x, logvar_x) + std_normal_logpdf_rows(z) -
             VaeEstimator::gauss_logpdf(z, mu, logvar);
  REQUIRE((iwae1 - logw).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("iwae is deterministic given a fixed seed-stream") {
  auto vae = small_trained_vae(4);
  RngStream qrng(5);
  Mat x = qrng.normal_mat(10, 4);
  RngStream r1(6), r2(6);
  REQUIRE(vae.log_prob_batch(x, r1) == vae.log_prob_batch(x, r2));
  REQUIRE_THROWS_AS(vae.iwae_log_prob(x, 0, r1), ParameterError);
}

TEST_CASE("iwae behaves as a stochastic lower bound with Burda monotonicity", "[train]") {
  auto vae = small_trained_vae(7);
  RngStream qrng(8);
  Mat held = qrng.normal_mat(256, 4);
  double analytic = std_normal_logpdf_rows(held).mean();

  // fit example: held-out IWAE within 0.3 nats of the analytic value
  RngStream r0(9);
  double iwae64 = vae.log_prob_batch(held, r0).mean();
  INFO("iwae64 " << iwae64 << " analytic " << analytic);
  REQUIRE(std::abs(iwae64 - analytic) < 0.3);

  // 200 repetitions of the K=1 and K=64 estimates on a small panel
  Mat panel = held.topRows(16);
  Mat panel_n = normalize_rows(panel, vae.reference_mean(), vae.reference_std());
  double jac = -vae.reference_std().array().log().sum();
  std::vector<double> k1_means, k64_means;
  RngStream rep_rng(10);
  for (int rep = 0; rep < 200; ++rep) {
    RngStream r = rep_rng.child(uint64_t(rep));
    k1_means.push_back(vae.iwae_log_prob(panel_n, 1, r).mean() + jac);
    k64_means.push_back(vae.iwae_log_prob(panel_n, 64, r).mean() + jac);
  }
  auto m1 = moments(k1_means);
  auto m64 = moments(k64_means);
  double analytic_panel = std_normal_logpdf_rows(panel).mean();
  double se1 = m1.std / std::sqrt(200.0);
  // stochastic lower bound: mean estimate <= analytic + 3 SE
  REQUIRE(m1.mean <= analytic_panel + 3.0 * se1);
  REQUIRE(m64.mean <= analytic_panel + 3.0 * m64.std / std::sqrt(200.0));
  // tightening in K
  REQUIRE(m64.mean >= m1.mean);
}

TEST_CASE("vae training gradients match finite differences") {
  VaeEstimator::Params p;
  p.latent_dim = 2;
  p.hidden = {6};
  VaeEstimator vae(p);
  RngStream rng(11);
  Mat train = rng.normal_mat(40, 3);
  FitConfig cfg;
  cfg.max_epochs = 1;
  cfg.batch_size = 40;
  cfg.patience = 0;
  vae.fit(train, train.topRows(10), cfg);
  Mat batch = rng.normal_mat(8, 3);
  auto params = vae.all_params();
  auto loss_fn = [&]() {
    nn::Tape t;
    RngStream r(12);
    return t.val(vae.tape_neg_elbo(t, batch, r))(0, 0);
  };
  auto backward_fn = [&]() {
    nn::Tape t;
    RngStream r(12);
    t.backward(vae.tape_neg_elbo(t, batch, r));
  };
  auto res = gormpo::testing::grad_check(params, loss_fn, backward_fn);
  REQUIRE(res.max_rel_err < 1e-5);
}

TEST_CASE("vae checkpoint round trip") {
  auto vae = small_trained_vae(13);
  RngStream rng(14);
  vae.calibrate_threshold(rng.normal_mat(150, 4), rng);
  auto path = (std::filesystem::temp_directory_path() / "gormpo_vae.gpac").string();
  vae.save(path);
  auto back = load_density(path);
  Mat x = rng.normal_mat(5, 4);
  RngStream r1(15), r2(15);
  REQUIRE(back->log_prob_batch(x, r1) == vae.log_prob_batch(x, r2));
  std::remove(path.c_str());
}
