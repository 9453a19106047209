#include "gormpo/tabular.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;

TEST_CASE("make_random_tabular is deterministic per seed") {
  auto a = make_random_tabular(0, 3, 2, 0.9);
  auto b = make_random_tabular(0, 3, 2, 0.9);
  REQUIRE(a.transition == b.transition);
  REQUIRE(a.reward == b.reward);
  REQUIRE(a.initial_dist == b.initial_dist);

  auto c = make_random_tabular(1, 3, 2, 0.9);
  REQUIRE(a.transition != c.transition);
}

TEST_CASE("random tabular instances satisfy the constructor contract") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto mdp = make_random_tabular(seed, 6, 3, 0.95);
    for (Eigen::Index r = 0; r < mdp.transition.rows(); ++r) {
      REQUIRE_THAT(mdp.transition.row(r).sum(), Catch::Matchers::WithinAbs(1.0, 1e-12));
      REQUIRE(mdp.transition.row(r).minCoeff() >= 0.0);
    }
    REQUIRE(mdp.reward.cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("make_random_tabular rejects bad parameters") {
  REQUIRE_THROWS_AS(make_random_tabular(0, 1, 2, 0.9), ParameterError);
  REQUIRE_THROWS_AS(make_random_tabular(0, 3, 1, 0.9), ParameterError);
  REQUIRE_THROWS_AS(make_random_tabular(0, 3, 2, 1.0), ParameterError);
  REQUIRE_THROWS_AS(make_random_tabular(0, 3, 2, 0.0), ParameterError);
}

TEST_CASE("exact_return on degenerate cases") {
  SECTION("zero reward gives zero return") {
    auto mdp = make_random_tabular(3, 4, 2, 0.9);
    mdp.reward.setZero();
    auto pi = TabularPolicy::uniform(4, 2);
    REQUIRE_THAT(exact_return(mdp, pi), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("single self-looping state is the geometric series") {
    TabularMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transition = Mat::Ones(1, 1);
    mdp.reward = Mat::Ones(1, 1);
    mdp.initial_dist = Vec::Ones(1);
    mdp.gamma = 0.9;
    mdp.validate();
    auto pi = TabularPolicy::uniform(1, 1);
    REQUIRE_THAT(exact_return(mdp, pi), Catch::Matchers::WithinAbs(10.0, 1e-10));
  }
}

TEST_CASE("bellman residual of the exact solve is tiny") {
  auto mdp = make_random_tabular(11, 8, 3, 0.97);
  RngStream rng(5);
  auto pi = TabularPolicy::random(8, 3, rng);
  Vec v = exact_values(mdp, pi);
  Vec r_pi;
  Mat p_pi;
  policy_kernels(mdp, pi, r_pi, p_pi);
  Vec residual = v - (r_pi + mdp.gamma * p_pi * v);
  REQUIRE(residual.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("occupancy conventions") {
  SECTION("single state/action mass is 1/(1-gamma)") {
    TabularMDP mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.transition = Mat::Ones(1, 1);
    mdp.reward = Mat::Zero(1, 1);
    mdp.initial_dist = Vec::Ones(1);
    mdp.gamma = 0.5;
    auto pi = TabularPolicy::uniform(1, 1);
    Mat rho = occupancy(mdp, pi);
    REQUIRE_THAT(rho(0, 0), Catch::Matchers::WithinAbs(2.0, 1e-10));
    Mat rho_n = occupancy(mdp, pi, true);
    REQUIRE_THAT(rho_n(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-10));
  }
  SECTION("occupancy-weighted reward equals exact return on 50 instances") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      auto mdp = make_random_tabular(seed, 5, 3, 0.9);
      RngStream rng(seed + 1000);
      auto pi = TabularPolicy::random(5, 3, rng);
      Mat rho = occupancy(mdp, pi);
      double eta_occ = rho.cwiseProduct(mdp.reward).sum();
      REQUIRE_THAT(eta_occ, Catch::Matchers::WithinAbs(exact_return(mdp, pi), 1e-8));
      REQUIRE_THAT(rho.sum(), Catch::Matchers::WithinAbs(1.0 / (1.0 - mdp.gamma), 1e-8));
      REQUIRE(rho.minCoeff() >= -1e-15);
    }
  }
  SECTION("uniform policy on a symmetric two-state chain splits evenly") {
    TabularMDP mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    mdp.transition = Mat(4, 2);
    // action 0 stays, action 1 swaps; fully symmetric between the two states
    mdp.transition << 1, 0, 0, 1, 0, 1, 1, 0;
    mdp.reward = Mat::Zero(2, 2);
    mdp.initial_dist = Vec::Constant(2, 0.5);
    mdp.gamma = 0.9;
    auto pi = TabularPolicy::uniform(2, 2);
    Mat rho = occupancy(mdp, pi);
    REQUIRE_THAT(rho.row(0).sum(), Catch::Matchers::WithinAbs(rho.row(1).sum(), 1e-12));
  }
}

TEST_CASE("exact return agrees with the Monte-Carlo oracle", "[slow]") {
  // horizon chosen so the truncation bias gamma^H * r_max/(1-gamma) < 1e-4
  double gamma = 0.9;
  int horizon = int(std::ceil(std::log(1e-4 * (1.0 - gamma)) / std::log(gamma)));
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto mdp = make_random_tabular(seed, 5, 3, gamma);
    RngStream prng(seed + 77);
    auto pi = TabularPolicy::random(5, 3, prng);
    double eta = exact_return(mdp, pi);
    RngStream mc_rng(seed + 1234);
    double se = 0.0;
    double mc = monte_carlo_return(mdp, pi, 100000, horizon, mc_rng, &se);
    INFO("seed " << seed << " exact " << eta << " mc " << mc << " se " << se);
    REQUIRE(std::abs(mc - eta) < 3.0 * se + 1e-4);
  }
}
