#pragma once

#include "gormpo/density/estimator.hpp"

#include <queue>

namespace gormpo::density {

// Exact k-nearest-neighbor index (median-split kd-tree with branch-and-bound
// search). Distances are squared L2 over the supplied points.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(Mat points) : points_(std::move(points)) {
    if (points_.rows() == 0) throw ParameterError("KdTree: empty point set");
    order_.resize(size_t(points_.rows()));
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(size_t(points_.rows()) * 2);
    root_ = build(0, Eigen::Index(order_.size()), 0);
  }

  /// Indices of the k nearest points to q (ascending distance).
  std::vector<Eigen::Index> knn(const Vec& q, Eigen::Index k) const {
    k = std::min<Eigen::Index>(k, points_.rows());
    // max-heap of (distance^2, index)
    std::priority_queue<std::pair<double, Eigen::Index>> heap;
    search(root_, q, k, heap);
    std::vector<Eigen::Index> out;
    out.resize(size_t(k));
    for (Eigen::Index i = k - 1; i >= 0; --i) {
      out[size_t(i)] = heap.top().second;
      heap.pop();
    }
    return out;
  }

  Eigen::Index size() const { return points_.rows(); }
  const Mat& points() const { return points_; }

 private:
  struct Node {
    Eigen::Index point = -1;
    int axis = 0;
    int32_t left = -1, right = -1;
  };

  int32_t build(Eigen::Index begin, Eigen::Index end, int depth) {
    if (begin >= end) return -1;
    int axis = depth % int(points_.cols());
    Eigen::Index mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) {
                       return points_(a, axis) < points_(b, axis);
                     });
    Node n;
    n.point = order_[size_t(mid)];
    n.axis = axis;
    int32_t id = int32_t(nodes_.size());
    nodes_.push_back(n);
    nodes_[size_t(id)].left = build(begin, mid, depth + 1);
    nodes_[size_t(id)].right = build(mid + 1, end, depth + 1);
    return id;
  }

  void search(int32_t id, const Vec& q, Eigen::Index k,
              std::priority_queue<std::pair<double, Eigen::Index>>& heap) const {
    if (id < 0) return;
    const Node& n = nodes_[size_t(id)];
    double d2 = (points_.row(n.point).transpose() - q).squaredNorm();
    if (Eigen::Index(heap.size()) < k) {
      heap.emplace(d2, n.point);
    } else if (d2 < heap.top().first) {
      heap.pop();
      heap.emplace(d2, n.point);
    }
    double delta = q(n.axis) - points_(n.point, n.axis);
    int32_t near = delta < 0 ? n.left : n.right;
    int32_t far = delta < 0 ? n.right : n.left;
    search(near, q, k, heap);
    if (Eigen::Index(heap.size()) < k || delta * delta < heap.top().first)
      search(far, q, k, heap);
  }

  Mat points_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

// Gaussian-kernel density over the training pairs, with the sum restricted to
// the k nearest neighbors (full sum when k >= N). Constant feature columns are
// excluded from the distance and from the kernel normalizer.
class KdeEstimator final : public DensityEstimator {
 public:
  struct Params {
    double bandwidth = 1.0;
    Eigen::Index k_neighbors = 100;
  };

  KdeEstimator() : KdeEstimator(Params()) {}
  explicit KdeEstimator(Params p) : params_(p) {
    if (params_.bandwidth <= 0.0) throw ParameterError("kde: bandwidth must be positive");
  }

  std::string family() const override { return "kde"; }

  const Params& params() const { return params_; }
  const Mat& reference_points() const { return reference_; }

  // Full-sum log-density over all reference points: the brute-force oracle
  // that the kNN approximation must match when k >= N. The kernel sum is
  // evaluated in linear space on purpose: far from the data every term
  // underflows, the sum hits zero, and the score saturates at the floor --
  // the characteristic KDE spike in deep-OOD regions.
  double brute_force_log_prob_normalized(const Vec& z) const {
    Vec za = active(z.transpose()).transpose().col(0);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < reference_.rows(); ++i)
      sum += std::exp(kernel_log_const_ -
                      (reference_.row(i).transpose() - za).squaredNorm() / (2.0 * h2_));
    if (sum <= 0.0) return kLogDensityFloor;
    return std::log(sum / double(reference_.rows()));
  }

 protected:
  void fit_normalized(const Mat& train, const Mat& /*val*/, const FitConfig& /*cfg*/) override {
    active_dims_.clear();
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
      double span = train.col(j).maxCoeff() - train.col(j).minCoeff();
      if (span > 1e-12 || train.rows() == 1) active_dims_.push_back(j);
    }
    if (active_dims_.empty()) throw TrainingError("kde: every feature is constant");
    reference_ = active(train);
    tree_ = KdTree(reference_);
    h2_ = params_.bandwidth * params_.bandwidth;
    kernel_log_const_ = -0.5 * double(active_dims_.size()) * std::log(2.0 * M_PI * h2_);
  }

  Vec log_prob_normalized(const Mat& z, RngStream& /*rng*/) const override {
    Mat za = active(z);
    Eigen::Index k = std::min<Eigen::Index>(params_.k_neighbors, reference_.rows());
    Vec out(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Vec q = za.row(i).transpose();
      auto nn_idx = tree_.knn(q, k);
      double sum = 0.0;
      for (size_t j = 0; j < nn_idx.size(); ++j)
        sum += std::exp(kernel_log_const_ -
                        (reference_.row(nn_idx[j]).transpose() - q).squaredNorm() / (2.0 * h2_));
      out(i) = sum > 0.0 ? std::log(sum / double(reference_.rows())) : kLogDensityFloor;
    }
    return out;
  }

  void save_state(ArrayFile& af) const override {
    af.put_scalar("bandwidth", params_.bandwidth);
    af.put_scalar("k_neighbors", double(params_.k_neighbors));
    af.put_f64("reference", reference_);
    std::vector<int64_t> dims(active_dims_.begin(), active_dims_.end());
    af.put_i64("active_dims", dims);
  }
  void load_state(const ArrayFile& af) override {
    params_.bandwidth = af.get_scalar("bandwidth");
    params_.k_neighbors = Eigen::Index(af.get_scalar("k_neighbors"));
    reference_ = af.get_mat("reference");
    active_dims_.clear();
    for (int64_t d : af.get_i64("active_dims")) active_dims_.push_back(Eigen::Index(d));
    tree_ = KdTree(reference_);
    h2_ = params_.bandwidth * params_.bandwidth;
    kernel_log_const_ = -0.5 * double(active_dims_.size()) * std::log(2.0 * M_PI * h2_);
  }

 private:
  Mat active(const Mat& z) const {
    Mat out(z.rows(), Eigen::Index(active_dims_.size()));
    for (size_t j = 0; j < active_dims_.size(); ++j) out.col(Eigen::Index(j)) = z.col(active_dims_[j]);
    return out;
  }

  Params params_;
  std::vector<Eigen::Index> active_dims_;
  Mat reference_;
  KdTree tree_;
  double h2_ = 1.0;
  double kernel_log_const_ = 0.0;
};

}  // namespace gormpo::density
