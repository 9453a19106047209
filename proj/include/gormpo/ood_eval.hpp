#pragma once

#include "gormpo/dataset.hpp"
#include "gormpo/density/ddpm.hpp"
#include "gormpo/density/estimator.hpp"

#include <functional>
#include <string>

namespace gormpo {

// ROC AUC of the "flag OOD when the log-density is low" detector: the
// probability that a random OOD score falls below a random ID score, ties
// counted a half. Computed from rank statistics.
inline double roc_auc(const std::vector<double>& id_scores,
                      const std::vector<double>& ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw ParameterError("roc_auc: both classes must be nonempty");
  struct Tagged {
    double score;
    bool is_id;
  };
  std::vector<Tagged> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) { return a.score < b.score; });
  // average ranks over tie groups, accumulate the ID rank sum
  double id_rank_sum = 0.0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double avg_rank = 0.5 * (double(i + 1) + double(j));  // 1-based ranks
    for (size_t k = i; k < j; ++k)
      if (all[k].is_id) id_rank_sum += avg_rank;
    i = j;
  }
  double n_id = double(id_scores.size()), n_ood = double(ood_scores.size());
  double u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
  return u / (n_id * n_ood);
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double tpr = 0.0;  // flagged fraction of true OOD
  double tnr = 0.0;  // passed fraction of true ID
};

/// Threshold detector: predict OOD iff score < tau.
inline ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                                    const std::vector<uint8_t>& labels,
                                                    double tau) {
  if (scores.size() != labels.size())
    throw ParameterError("classification_metrics: scores/labels length mismatch");
  int64_t n_ood = 0, n_id = 0, tp = 0, tn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool is_ood = labels[i] != 0;
    bool flagged = scores[i] < tau;
    if (is_ood) {
      ++n_ood;
      if (flagged) ++tp;
    } else {
      ++n_id;
      if (!flagged) ++tn;
    }
  }
  if (n_ood == 0 || n_id == 0)
    throw ParameterError("classification_metrics: need both classes in the labels");
  ClassificationMetrics m;
  m.tpr = double(tp) / double(n_ood);
  m.tnr = double(tn) / double(n_id);
  m.accuracy = (m.tpr * double(n_ood) + m.tnr * double(n_id)) / double(n_ood + n_id);
  return m;
}

struct OodSweepRow {
  std::string estimator;
  double mu = 0.0;
  uint64_t seed = 0;
  double auc = 0.0;
  double accuracy = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  double tau = 0.0;
  double id_score_mean = 0.0;
  double ood_score_mean = 0.0;
};

using BenchmarkGenerator = std::function<OODBenchmark(double mu, uint64_t seed)>;

// Full metric grid over estimators x shifts x seeds. Every estimator is
// driven through the identical DensityEstimator interface; scores are always
// log-densities and low means OOD.
inline std::vector<OodSweepRow> ood_sweep(
    const std::vector<std::pair<std::string, const density::DensityEstimator*>>& estimators,
    const BenchmarkGenerator& generate, const std::vector<double>& mus,
    const std::vector<uint64_t>& seeds) {
  std::vector<OodSweepRow> rows;
  for (const auto& [name, model] : estimators) {
    if (!model->fitted()) throw StateError("ood_sweep: estimator '" + name + "' is not fitted");
    for (double mu : mus) {
      for (uint64_t seed : seeds) {
        OODBenchmark bench = generate(mu, seed);
        RngStream score_rng = RngStream(seed).child("scores").child(name);
        Vec scores = model->log_prob_batch(bench.inputs, score_rng);
        std::vector<double> id_scores, ood_scores, all_scores(scores.data(),
                                                              scores.data() + scores.size());
        for (int64_t i = 0; i < bench.size(); ++i)
          (bench.labels[size_t(i)] ? ood_scores : id_scores).push_back(scores(i));
        OodSweepRow row;
        row.estimator = name;
        row.mu = mu;
        row.seed = seed;
        row.auc = roc_auc(id_scores, ood_scores);
        row.tau = model->threshold();
        auto cm = classification_metrics(all_scores, bench.labels, row.tau);
        row.accuracy = cm.accuracy;
        row.tpr = cm.tpr;
        row.tnr = cm.tnr;
        row.id_score_mean = moments(id_scores).mean;
        row.ood_score_mean = moments(ood_scores).mean;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

// ---- diffusion noise diagnostics ----

struct NoiseDiagnostics {
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double kl_divergence = 0.0;  // KL(ID || OOD) over shared histograms
};

/// KL divergence between two histograms with shared binning and additive
/// (Laplace) smoothing.
inline double histogram_kl(const std::vector<double>& p_samples,
                           const std::vector<double>& q_samples, int n_bins = 64,
                           double smoothing = 1e-6) {
  if (p_samples.empty() || q_samples.empty())
    throw ParameterError("histogram_kl: empty sample");
  double lo = std::min(*std::min_element(p_samples.begin(), p_samples.end()),
                       *std::min_element(q_samples.begin(), q_samples.end()));
  double hi = std::max(*std::max_element(p_samples.begin(), p_samples.end()),
                       *std::max_element(q_samples.begin(), q_samples.end()));
  if (hi <= lo) hi = lo + 1.0;
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(size_t(n_bins), 0.0);
    for (double x : xs) {
      auto b = int64_t(double(n_bins) * (x - lo) / (hi - lo));
      b = std::min<int64_t>(std::max<int64_t>(b, 0), n_bins - 1);
      h[size_t(b)] += 1.0;
    }
    double total = double(xs.size()) + smoothing * double(n_bins);
    for (auto& v : h) v = (v + smoothing) / total;
    return h;
  };
  auto p = histogram(p_samples);
  auto q = histogram(q_samples);
  double kl = 0.0;
  for (int b = 0; b < n_bins; ++b) kl += p[size_t(b)] * std::log(p[size_t(b)] / q[size_t(b)]);
  return kl;
}

// Statistics of the noise the diffusion model predicts at the mid-schedule
// timestep: pooled component skewness/kurtosis on ID inputs and the KL
// between ID and OOD predicted-noise histograms. Both sides reuse the same
// forked noise stream, so identical inputs give identical histograms.
inline NoiseDiagnostics ddpm_noise_diagnostics(const density::DensityEstimator& model,
                                               const Mat& id_pairs, const Mat& ood_pairs,
                                               uint64_t seed) {
  const auto* ddpm = dynamic_cast<const density::DdpmEstimator*>(&model);
  if (!ddpm) throw ParameterError("ddpm_noise_diagnostics: model is not a diffusion estimator");
  RngStream root(seed);
  int k = ddpm->mid_timestep();
  RngStream id_rng = root.child("noise");
  RngStream ood_rng = root.child("noise");
  Mat id_noise = ddpm->predicted_noise(id_pairs, k, id_rng);
  Mat ood_noise = ddpm->predicted_noise(ood_pairs, k, ood_rng);
  std::vector<double> id_pool(id_noise.data(), id_noise.data() + id_noise.size());
  std::vector<double> ood_pool(ood_noise.data(), ood_noise.data() + ood_noise.size());
  NoiseDiagnostics out;
  auto m = moments(id_pool);
  out.skewness = m.skewness;
  out.excess_kurtosis = m.excess_kurtosis;
  out.kl_divergence = histogram_kl(id_pool, ood_pool);
  return out;
}

}  // namespace gormpo
