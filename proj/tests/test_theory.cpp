#include "gormpo/theory.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gormpo;
using namespace gormpo::theory;

TEST_CASE("ipm_sup_norm is the L1 distance and matches sign-vector enumeration") {
  Vec p(2), q(2);
  p << 1, 0;
  q << 0, 1;
  REQUIRE(ipm_sup_norm(p, p) == 0.0);
  REQUIRE(ipm_sup_norm(p, q) == 2.0);
  REQUIRE_THROWS_AS(ipm_sup_norm(p, Vec::Zero(3)), ParameterError);

  RngStream rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 6;
    Vec a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = -std::log(1.0 - rng.uniform());
      b(i) = -std::log(1.0 - rng.uniform());
    }
    a /= a.sum();
    b /= b.sum();
    // brute-force sup over f in {-1, +1}^n of |E_a f - E_b f|
    double best = 0.0;
    for (int mask = 0; mask < (1 << n); ++mask) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) v += ((mask >> i) & 1 ? 1.0 : -1.0) * (a(i) - b(i));
      best = std::max(best, std::abs(v));
    }
    REQUIRE_THAT(ipm_sup_norm(a, b), Catch::Matchers::WithinAbs(best, 1e-12));
  }
}

TEST_CASE("generated instances satisfy the assumptions by construction") {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    auto inst = make_instance(seed, 6, 3, 0.9);
    // transition rows are distributions
    for (Eigen::Index r = 0; r < inst.t_hat.rows(); ++r) {
      REQUIRE_THAT(inst.t_hat.row(r).sum(), Catch::Matchers::WithinAbs(1.0, 1e-10));
      REQUIRE(inst.t_hat.row(r).minCoeff() >= -1e-12);
    }
    // Assumption 3 by construction
    REQUIRE((inst.log_p_est - inst.log_p_true).cwiseAbs().maxCoeff() <= inst.eps_density + 1e-12);
    // Assumption 2 with the fitted constant
    Mat eu = inst.expected_penalty(inst.t_hat, inst.penalty_true());
    for (int s = 0; s < inst.mdp.n_states; ++s)
      for (int a = 0; a < inst.mdp.n_actions; ++a) {
        double d = ipm_sup_norm(inst.t_hat.row(inst.mdp.row(s, a)).transpose(),
                                inst.mdp.transition.row(inst.mdp.row(s, a)).transpose());
        REQUIRE(d <= inst.c_hat * eu(s, a) + inst.eps_approx + 1e-10);
      }
    // penalties differ by at most eps_density (Lipschitz propagation)
    REQUIRE((inst.penalty_true() - inst.penalty_est()).cwiseAbs().maxCoeff() <=
            inst.eps_density + 1e-12);
  }
}

TEST_CASE("fit_C_hat is minimal and detects infeasibility") {
  SECTION("identical model gives zero") {
    auto inst = make_instance(3, 5, 3, 0.9);
    inst.t_hat = inst.mdp.transition;
    REQUIRE(fit_C_hat(inst) == 0.0);
  }
  SECTION("slack absorbed by eps_approx gives zero") {
    auto inst = make_instance(4, 5, 3, 0.9);
    inst.eps_approx = 10.0;  // larger than any possible L1 distance
    REQUIRE(fit_C_hat(inst) == 0.0);
  }
  SECTION("returned constant is tight: equality within 1e-10 somewhere") {
    for (uint64_t seed = 10; seed < 16; ++seed) {
      auto inst = make_instance(seed, 6, 3, 0.95);
      Mat eu = inst.expected_penalty(inst.t_hat, inst.penalty_true());
      double c = fit_C_hat(inst);
      if (c == 0.0) continue;
      double worst_gap = std::numeric_limits<double>::infinity();
      bool all_ok = true;
      for (int s = 0; s < inst.mdp.n_states; ++s)
        for (int a = 0; a < inst.mdp.n_actions; ++a) {
          double d = ipm_sup_norm(inst.t_hat.row(inst.mdp.row(s, a)).transpose(),
                                  inst.mdp.transition.row(inst.mdp.row(s, a)).transpose());
          double bound = c * eu(s, a) + inst.eps_approx;
          all_ok &= d <= bound + 1e-12;
          worst_gap = std::min(worst_gap, bound - d);
        }
      REQUIRE(all_ok);
      REQUIRE(worst_gap < 1e-10);  // active constraint
      // reducing C breaks at least one constraint
      double c_minus = c - 1e-6;
      bool violated = false;
      for (int s = 0; s < inst.mdp.n_states && !violated; ++s)
        for (int a = 0; a < inst.mdp.n_actions && !violated; ++a) {
          double d = ipm_sup_norm(inst.t_hat.row(inst.mdp.row(s, a)).transpose(),
                                  inst.mdp.transition.row(inst.mdp.row(s, a)).transpose());
          violated = d > c_minus * eu(s, a) + inst.eps_approx;
        }
      REQUIRE(violated);
    }
  }
  SECTION("zero expected penalty with excess distance is infeasible") {
    auto inst = make_instance(5, 4, 2, 0.9);
    inst.tau = -1e9;  // u identically zero
    inst.eps_approx = 1e-6;
    // force a visible perturbation on one row
    inst.t_hat = inst.mdp.transition;
    inst.t_hat(0, 0) = std::min(1.0, inst.t_hat(0, 0) + 0.2);
    inst.t_hat.row(0) /= inst.t_hat.row(0).sum();
    REQUIRE_THROWS_WITH(fit_C_hat(inst), Catch::Matchers::ContainsSubstring("infeasible"));
  }
}

TEST_CASE("telescoping identity holds to solver precision") {
  SECTION("identical dynamics give zero on both sides") {
    auto inst = make_instance(7, 5, 3, 0.9);
    inst.t_hat = inst.mdp.transition;
    auto pi = TabularPolicy::uniform(5, 3);
    REQUIRE_THAT(check_telescoping(inst, pi), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("random instances and policies") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      auto inst = make_instance(seed + 100, 6, 3, 0.93);
      RngStream prng(seed);
      for (int k = 0; k < 5; ++k) {
        auto pi = TabularPolicy::random(6, 3, prng);
        REQUIRE(std::abs(check_telescoping(inst, pi)) < 1e-8);
      }
    }
  }
}

TEST_CASE("penalty error propagation is 1-Lipschitz everywhere") {
  auto check = check_lipschitz_penalty(1000000, 42, 0.25);
  REQUIRE(check.ok);
  REQUIRE(check.max_ratio <= 1.0 + 1e-12);
  REQUIRE(check.max_diff <= 0.25 + 1e-12);
  // deep saturation: both sides far below tau, difference vanishes
  double u1 = penalty_u(-100.0, 0.0), u2 = penalty_u(-100.5, 0.0);
  REQUIRE(std::abs(u1 - u2) < 1e-8);
}

TEST_CASE("theorem 1 conservative value bound") {
  SECTION("error-free limit holds with penalty-mass slack") {
    auto inst = make_instance(11, 5, 3, 0.9, /*eps_density=*/0.0, /*eps_approx=*/0.0);
    inst.t_hat = inst.mdp.transition;
    inst.log_p_est = inst.log_p_true;
    inst.c_hat = fit_C_hat(inst);
    REQUIRE(inst.c_hat == 0.0);
    auto pi = TabularPolicy::uniform(5, 3);
    auto v = check_theorem1(inst, pi, /*lambda_override=*/0.3);
    REQUIRE(v.holds);
    // slack = lambda * E_rho_hat[u_est] in unnormalized occupancy units
    Mat rho = occupancy(inst.model_mdp(), pi);
    Mat eu = inst.expected_penalty(inst.t_hat, inst.penalty_est());
    double expected_slack = 0.3 * rho.cwiseProduct(eu).sum();
    REQUIRE_THAT(v.slack, Catch::Matchers::WithinAbs(expected_slack, 1e-9));
  }
  SECTION("holds on every random instance and policy") {
    int checked = 0;
    for (uint64_t seed = 0; seed < 40; ++seed) {
      auto inst = make_instance(seed + 500, 7, 3, 0.9);
      RngStream prng(seed);
      for (int k = 0; k < 5; ++k) {
        auto pi = TabularPolicy::random(7, 3, prng);
        auto v = check_theorem1(inst, pi);
        INFO("seed " << seed << " policy " << k << " slack " << v.slack);
        REQUIRE(v.holds);
        ++checked;
      }
    }
    REQUIRE(checked == 200);
  }
  SECTION("negative control: undersized lambda admits violations") {
    bool found_violation = false;
    for (uint64_t seed = 0; seed < 200 && !found_violation; ++seed) {
      auto inst = make_instance(seed + 900, 6, 3, 0.95, /*eps_density=*/0.0, /*eps_approx=*/1e-6);
      RngStream prng(seed);
      for (int k = 0; k < 10 && !found_violation; ++k) {
        auto pi = TabularPolicy::random(6, 3, prng);
        auto v = check_theorem1(inst, pi, /*lambda_override=*/1e-4 * inst.lambda);
        found_violation = !v.holds;
      }
    }
    REQUIRE(found_violation);
  }
}

TEST_CASE("theorem 2 optimality gap", "[slow]") {
  SECTION("error-free limit reduces to the clean pessimism gap") {
    auto inst = make_instance(21, 4, 3, 0.9, 0.0, 0.0);
    inst.t_hat = inst.mdp.transition;
    inst.log_p_est = inst.log_p_true;
    inst.c_hat = fit_C_hat(inst);
    inst.lambda = inst.mdp.gamma * inst.value_scale() * inst.c_hat;
    double dmin = delta_min(inst);
    auto v = check_theorem2(inst, dmin + 0.01);
    REQUIRE_FALSE(v.vacuous);
    REQUIRE(v.holds);
    REQUIRE(v.slack >= 0.0);
  }
  SECTION("holds for swept delta on random tiny instances") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      auto inst = make_instance(seed + 1500, 4, 3, 0.9);
      double dmin = delta_min(inst);
      for (int j = 0; j < 5; ++j) {
        double delta = dmin + 0.05 * double(j);
        auto v = check_theorem2(inst, delta);
        INFO("seed " << seed << " delta " << delta << " slack " << v.slack);
        REQUIRE_FALSE(v.vacuous);
        REQUIRE(v.holds);
      }
    }
  }
  SECTION("delta below delta_min can leave the constraint set empty") {
    auto inst = make_instance(31, 3, 2, 0.9);
    double dmin = delta_min(inst);
    auto v = check_theorem2(inst, dmin - inst.eps_density - 1e-9);
    REQUIRE(v.vacuous);
  }
  SECTION("enumeration budget is enforced") {
    auto inst = make_instance(41, 5, 3, 0.9);
    REQUIRE_THROWS_AS(check_theorem2(inst, 1.0, /*max_policies=*/10), ParameterError);
  }
}
