#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gormpo {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Log-density floor: estimators return this instead of -inf on underflow so
// downstream penalties saturate rather than propagate non-finite values.
inline constexpr double kLogDensityFloor = -1e6;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Invalid argument to an operation.
struct ParameterError : Error {
  using Error::Error;
};
/// Corrupt, truncated, or wrong-version file.
struct FormatError : Error {
  using Error::Error;
};
/// Non-finite loss or diverged optimization.
struct TrainingError : Error {
  using Error::Error;
};
/// Non-finite intermediate in a numeric routine.
struct NumericError : Error {
  using Error::Error;
};
/// Object used before it was fitted / assembled.
struct StateError : Error {
  using Error::Error;
};
/// Bad run configuration (unknown key, missing artifact, ...).
struct ConfigError : Error {
  using Error::Error;
};

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Deterministic, platform-independent random stream (xoshiro256** seeded via
// splitmix64). Streams fork into independent children by key or name, so
// subsystems can consume randomness without perturbing each other.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : base_seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  RngStream child(uint64_t key) const {
    uint64_t sm = base_seed_;
    uint64_t mixed = detail::splitmix64(sm) ^ (key * 0x9e3779b97f4a7c15ULL);
    return RngStream(mixed);
  }
  RngStream child(std::string_view name) const {
    return child(detail::fnv1a(name));
  }

  uint64_t seed() const { return base_seed_; }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    uint64_t result = rotl(s_[1] * 5, 7) * 9;
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64() % span);
  }

  /// Standard normal via Box-Muller (one value per pair, deterministic).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  double normal(double mean, double std) { return mean + std * normal(); }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }
  Mat normal_mat(Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }
  Mat uniform_mat(Eigen::Index r, Eigen::Index c, double lo, double hi) {
    Mat m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }

  /// Fisher-Yates permutation of {0..n-1}.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(n);
    std::iota(p.begin(), p.end(), int64_t{0});
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(p[i], p[uniform_int(0, i)]);
    return p;
  }

  /// Index drawn from an unnormalized non-negative weight vector.
  int64_t categorical(const Vec& weights) {
    double total = weights.sum();
    if (!(total > 0.0)) throw ParameterError("categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      acc += weights(i);
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

 private:
  uint64_t base_seed_;
  uint64_t s_[4];
};

// ---- small numeric helpers ----

inline double logsumexp(const Vec& x) {
  double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

/// Percentile with the linear-interpolation convention: index h = (n-1)*p/100.
inline double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) throw ParameterError("percentile: empty sample");
  std::sort(xs.begin(), xs.end());
  double h = (double(xs.size()) - 1.0) * p / 100.0;
  auto lo = size_t(std::floor(h));
  if (lo + 1 >= xs.size()) return xs.back();
  return xs[lo] + (h - double(lo)) * (xs[lo + 1] - xs[lo]);
}

struct Moments {
  double mean = 0.0;
  double std = 0.0;        // population (ddof=0)
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  int64_t n = 0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  m.n = int64_t(xs.size());
  if (xs.empty()) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : xs) {
    double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= double(xs.size());
  m3 /= double(xs.size());
  m4 /= double(xs.size());
  m.std = std::sqrt(m2);
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

/// Kendall rank correlation between x and y (tau-a, ties counted as zero).
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ParameterError("kendall_tau: need two same-length samples, n >= 2");
  int64_t n = int64_t(x.size());
  int64_t s = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      double dx = x[j] - x[i], dy = y[j] - y[i];
      double prod = dx * dy;
      if (prod > 0) s += 1;
      else if (prod < 0) s -= 1;
    }
  return 2.0 * double(s) / double(n * (n - 1));
}

/// Exact one-sided p-value P(tau >= observed) under the null (all orderings
/// equally likely), by enumerating permutations. Usable for n <= 8.
inline double kendall_tau_pvalue(const std::vector<double>& x, const std::vector<double>& y) {
  int64_t n = int64_t(x.size());
  if (n > 8) throw ParameterError("kendall_tau_pvalue: exact enumeration limited to n <= 8");
  double observed = kendall_tau(x, y);
  std::vector<double> ys(y);
  std::sort(ys.begin(), ys.end());
  int64_t count = 0, total = 0;
  do {
    ++total;
    if (kendall_tau(x, ys) >= observed - 1e-12) ++count;
  } while (std::next_permutation(ys.begin(), ys.end()));
  return double(count) / double(total);
}

inline double clamp(double x, double lo, double hi) {
  return std::min(std::max(x, lo), hi);
}

}  // namespace gormpo
