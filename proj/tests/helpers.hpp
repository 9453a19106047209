#pragma once

#include "gormpo/nn.hpp"

#include <functional>
#include <vector>

namespace gormpo::testing {

// Central-difference gradient check: evaluates loss_fn twice per entry and
// compares with the analytic gradient stored by a backward pass.
struct GradCheckResult {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
};

inline GradCheckResult grad_check(const std::vector<nn::Parameter*>& params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<void()>& backward_fn,
                                  double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  backward_fn();
  GradCheckResult res;
  for (auto* p : params) {
    for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
      for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
        double orig = p->value(i, j);
        p->value(i, j) = orig + h;
        double fp = loss_fn();
        p->value(i, j) = orig - h;
        double fm = loss_fn();
        p->value(i, j) = orig;
        double numeric = (fp - fm) / (2.0 * h);
        double analytic = p->grad(i, j);
        double abs_err = std::abs(numeric - analytic);
        double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        res.max_abs_err = std::max(res.max_abs_err, abs_err);
        res.max_rel_err = std::max(res.max_rel_err, rel);
      }
    }
  }
  return res;
}

// Known 2-D two-component isotropic Gaussian mixture, with its exact
// log-density: the analytic oracle for the exact-likelihood estimators.
struct GaussianMixture2D {
  double sep = 1.0;   // component means at (-sep, 0) and (+sep, 0)
  double sigma = 0.6;

  Mat sample(Eigen::Index n, RngStream& rng) const {
    Mat x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      double cx = rng.uniform() < 0.5 ? -sep : sep;
      x(i, 0) = cx + sigma * rng.normal();
      x(i, 1) = sigma * rng.normal();
    }
    return x;
  }

  double logpdf(double x0, double x1) const {
    auto comp = [&](double mx) {
      double d2 = (x0 - mx) * (x0 - mx) + x1 * x1;
      return -std::log(2.0 * M_PI * sigma * sigma) - 0.5 * d2 / (sigma * sigma);
    };
    Vec terms(2);
    terms << std::log(0.5) + comp(-sep), std::log(0.5) + comp(sep);
    return logsumexp(terms);
  }

  Vec logpdf_rows(const Mat& x) const {
    Vec out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = logpdf(x(i, 0), x(i, 1));
    return out;
  }
};

}  // namespace gormpo::testing
