#include "gormpo/ood_eval.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;

TEST_CASE("roc_auc matches exhaustive pair enumeration") {
  SECTION("perfect separation") {
    REQUIRE(roc_auc({3.0, 4.0, 5.0}, {0.0, 1.0, 2.0}) == 1.0);
  }
  SECTION("identical multisets give one half") {
    REQUIRE(roc_auc({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.5);
  }
  SECTION("hand-enumerated mixed case") {
    // pairs (ood < id): (1<3)=1, (1<2)=1, (2<3)=1, (2==2)=0.5 -> 3.5/4
    REQUIRE_THAT(roc_auc({3.0, 2.0}, {1.0, 2.0}), Catch::Matchers::WithinAbs(0.875, 1e-12));
  }
  SECTION("brute-force oracle on random scores") {
    RngStream rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> id(20), ood(15);
      for (auto& x : id) x = std::round(rng.uniform(0, 10));
      for (auto& x : ood) x = std::round(rng.uniform(-2, 8));
      double expected = 0.0;
      for (double s_id : id)
        for (double s_ood : ood) expected += s_ood < s_id ? 1.0 : (s_ood == s_id ? 0.5 : 0.0);
      expected /= double(id.size() * ood.size());
      REQUIRE_THAT(roc_auc(id, ood), Catch::Matchers::WithinAbs(expected, 1e-12));
    }
  }
  SECTION("complement symmetry for tie-free sets") {
    RngStream rng(2);
    std::vector<double> a(30), b(25);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal() + 0.5;
    REQUIRE_THAT(roc_auc(a, b) + roc_auc(b, a), Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  SECTION("invariance under strictly increasing transforms") {
    RngStream rng(3);
    std::vector<double> a(30), b(25), ta, tb;
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal() - 1.0;
    for (double x : a) ta.push_back(std::exp(0.5 * x) + 3.0);
    for (double x : b) tb.push_back(std::exp(0.5 * x) + 3.0);
    REQUIRE_THAT(roc_auc(a, b), Catch::Matchers::WithinAbs(roc_auc(ta, tb), 1e-12));
  }
  REQUIRE_THROWS_AS(roc_auc({}, {1.0}), ParameterError);
}

TEST_CASE("classification metrics at a threshold") {
  std::vector<double> scores = {-5, -4, -3, -2, -1, 0};
  std::vector<uint8_t> labels = {1, 1, 1, 0, 0, 0};  // OOD scores are the low ones
  SECTION("threshold below all scores") {
    auto m = classification_metrics(scores, labels, -100.0);
    REQUIRE(m.tpr == 0.0);
    REQUIRE(m.tnr == 1.0);
    REQUIRE(m.accuracy == 0.5);
  }
  SECTION("threshold above all scores") {
    auto m = classification_metrics(scores, labels, 100.0);
    REQUIRE(m.tpr == 1.0);
    REQUIRE(m.tnr == 0.0);
  }
  SECTION("accuracy identity") {
    auto m = classification_metrics(scores, labels, -2.5);
    REQUIRE(m.tpr == 1.0);
    REQUIRE(m.tnr == 1.0);
    REQUIRE(m.accuracy == (m.tpr * 3 + m.tnr * 3) / 6.0);
  }
  SECTION("degenerate labels raise") {
    REQUIRE_THROWS_AS(classification_metrics(scores, {0, 0, 0, 0, 0, 0}, 0.0), ParameterError);
  }
}

TEST_CASE("histogram KL is zero for identical samples and positive otherwise") {
  RngStream rng(4);
  std::vector<double> a(2000), b(2000);
  for (auto& x : a) x = rng.normal();
  for (size_t i = 0; i < b.size(); ++i) b[i] = a[i];
  REQUIRE(histogram_kl(a, b) == 0.0);
  for (auto& x : b) x += 1.5;
  REQUIRE(histogram_kl(a, b) > 0.1);
}

namespace {
struct SweepFixture {
  OfflineDataset ds;
  density::KdeEstimator kde;
  SweepFixture() {
    PointMassEnv env;
    ds = collect_offline(env, make_pointmass_behavior(), 40, 9);
    auto [train, val] = split_train_val(ds, 0.2, 1);
    kde.fit(train.density_pairs(), val.density_pairs());
    RngStream rng(2);
    kde.calibrate_threshold(val.density_pairs(), rng);
  }
};
}  // namespace

TEST_CASE("ood sweep produces the full grid with sane AUC endpoints") {
  SweepFixture fx;
  std::vector<std::pair<std::string, const density::DensityEstimator*>> models = {
      {"kde", &fx.kde}};
  auto gen = [&](double mu, uint64_t seed) { return make_ood(fx.ds, mu, 5, seed); };
  std::vector<double> mus = {0.0, 2.0};
  std::vector<uint64_t> seeds = {1, 2, 3};
  auto rows = ood_sweep(models, gen, mus, seeds);
  REQUIRE(rows.size() == models.size() * mus.size() * seeds.size());
  double auc0 = 0, auc2 = 0;
  for (const auto& r : rows) (r.mu == 0.0 ? auc0 : auc2) += r.auc / 3.0;
  INFO("mean AUC at mu=0: " << auc0 << ", at mu=2: " << auc2);
  REQUIRE(auc0 > 0.40);
  REQUIRE(auc0 < 0.60);
  REQUIRE(auc2 > 0.9);
  // rates live in [0,1]
  for (const auto& r : rows) {
    REQUIRE((r.tpr >= 0.0 && r.tpr <= 1.0));
    REQUIRE((r.tnr >= 0.0 && r.tnr <= 1.0));
    REQUIRE((r.auc >= 0.0 && r.auc <= 1.0));
  }
}

TEST_CASE("ddpm noise diagnostics contract", "[train]") {
  RngStream rng(5);
  Mat train = rng.normal_mat(1200, 3);
  density::DdpmEstimator::Params p;
  p.n_steps = 40;
  p.hidden = {32, 32, 32};
  p.emb_dim = 16;
  density::DdpmEstimator ddpm(p);
  density::FitConfig cfg = density::default_fit_config("ddpm");
  cfg.max_epochs = 8;
  ddpm.fit(train, train.topRows(200), cfg);

  Mat id_pts = rng.normal_mat(300, 3);
  SECTION("identical inputs give exactly zero KL") {
    auto d = ddpm_noise_diagnostics(ddpm, id_pts, id_pts, 7);
    REQUIRE(d.kl_divergence == 0.0);
  }
  SECTION("gaussian-shift OOD keeps the KL small (distributional collapse)") {
    Mat ood_pts = id_pts;
    for (Eigen::Index i = 0; i < ood_pts.size(); ++i)
      ood_pts.data()[i] += rng.normal(2.0, 0.1);
    auto d = ddpm_noise_diagnostics(ddpm, id_pts, ood_pts, 8);
    INFO("skew " << d.skewness << " exkurt " << d.excess_kurtosis << " kl " << d.kl_divergence);
    REQUIRE(d.kl_divergence >= 0.0);
    REQUIRE(d.kl_divergence < 0.5);
  }
  SECTION("non-diffusion models are rejected") {
    density::KdeEstimator kde;
    Mat ref = rng.normal_mat(50, 3);
    kde.fit(ref, ref.topRows(10));
    REQUIRE_THROWS_AS(ddpm_noise_diagnostics(kde, id_pts, id_pts, 9), ParameterError);
  }
}
