#include "gormpo/density/all.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

using namespace gormpo;
using namespace gormpo::density;

TEST_CASE("kd-tree finds exact nearest neighbors") {
  RngStream rng(1);
  Mat pts = rng.normal_mat(500, 4);
  KdTree tree(pts);
  for (int trial = 0; trial < 50; ++trial) {
    Vec q = rng.normal_vec(4);
    auto idx = tree.knn(q, 10);
    // brute-force oracle
    std::vector<std::pair<double, Eigen::Index>> dist;
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      dist.emplace_back((pts.row(i).transpose() - q).squaredNorm(), i);
    std::sort(dist.begin(), dist.end());
    for (int j = 0; j < 10; ++j) REQUIRE(idx[size_t(j)] == dist[size_t(j)].second);
  }
}

TEST_CASE("kde single reference point at the origin matches the Gaussian kernel") {
  KdeEstimator kde;
  Mat ref = Mat::Zero(1, 2);
  kde.fit(ref, ref);
  RngStream rng(0);
  Vec origin = Vec::Zero(2);
  REQUIRE_THAT(kde.log_prob(origin, rng),
               Catch::Matchers::WithinAbs(std::log(1.0 / (2.0 * M_PI)), 1e-6));
  REQUIRE_THAT(kde.log_prob(origin, rng), Catch::Matchers::WithinAbs(-1.837877, 1e-6));
}

TEST_CASE("kde with k = N equals the brute-force full sum") {
  RngStream rng(3);
  Mat train = rng.normal_mat(400, 3);
  KdeEstimator::Params p;
  p.k_neighbors = 400;  // k = N
  KdeEstimator kde(p);
  kde.fit(train, train.topRows(50));
  RngStream qrng(4);
  for (int i = 0; i < 100; ++i) {
    Vec q = qrng.normal_vec(3) * 2.0;
    double fast = kde.log_prob(q, qrng);
    // oracle works in normalized coordinates; apply the same statistics
    Vec zq = (q - kde.reference_mean()).cwiseQuotient(kde.reference_std());
    double slow = kde.brute_force_log_prob_normalized(zq) - kde.reference_std().array().log().sum();
    REQUIRE_THAT(fast, Catch::Matchers::WithinAbs(slow, 1e-10));
  }
}

TEST_CASE("kde locality: training points score higher than far points") {
  RngStream rng(5);
  Mat train = rng.normal_mat(300, 4);
  KdeEstimator kde;
  kde.fit(train, train.topRows(30));
  double at_train = kde.log_prob(train.row(0).transpose(), rng);
  Vec far = train.row(0).transpose() + Vec::Constant(4, 10.0);
  REQUIRE(at_train > kde.log_prob(far, rng));
}

TEST_CASE("kde saturates at the floor deep in OOD space") {
  RngStream rng(6);
  Mat train = rng.normal_mat(200, 2);
  KdeEstimator kde;
  kde.fit(train, train.topRows(20));
  // 50 normalized units away from everything: every kernel term underflows
  Vec q = Vec::Constant(2, 60.0);
  REQUIRE(kde.log_prob(q, rng) == kLogDensityFloor);
}

TEST_CASE("kde k clamps to N and excludes constant columns") {
  RngStream rng(7);
  Mat train(50, 3);
  train.col(0) = rng.normal_vec(50);
  train.col(1).setConstant(2.5);  // degenerate feature
  train.col(2) = rng.normal_vec(50);
  KdeEstimator::Params p;
  p.k_neighbors = 1000;  // > N, must clamp
  KdeEstimator kde(p);
  kde.fit(train, train.topRows(10));
  // moving along the constant column does not change the score
  Vec a(3), b(3);
  a << 0.1, 2.5, -0.2;
  b << 0.1, 99.0, -0.2;
  REQUIRE(kde.log_prob(a, rng) == kde.log_prob(b, rng));
}

TEST_CASE("kde checkpoint round trip") {
  RngStream rng(8);
  Mat train = rng.normal_mat(120, 3);
  KdeEstimator kde;
  kde.fit(train, train.topRows(100));
  kde.calibrate_threshold(train.topRows(100), rng);
  auto path = (std::filesystem::temp_directory_path() / "gormpo_kde.gpac").string();
  kde.save(path);
  auto back = load_density(path);
  REQUIRE(back->family() == "kde");
  RngStream r1(9), r2(9);
  Vec q = rng.normal_vec(3);
  REQUIRE(back->log_prob(q, r1) == kde.log_prob(q, r2));
  REQUIRE(back->threshold() == kde.threshold());
  std::remove(path.c_str());
}
