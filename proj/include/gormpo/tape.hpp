#pragma once

#include "gormpo/common.hpp"

#include <functional>
#include <vector>

namespace gormpo::nn {

using gormpo::Mat;
using gormpo::Vec;

/// Trainable tensor. Gradients accumulate across backward calls until
/// zero_grad is invoked (optimizers own that).
struct Parameter {
  Mat value;
  Mat grad;

  Parameter() = default;
  explicit Parameter(Mat v) : value(std::move(v)) { grad = Mat::Zero(value.rows(), value.cols()); }
  void zero_grad() { grad.setZero(); }
};

struct Var {
  int32_t idx = -1;
};

// Reverse-mode tape over dense matrices. Build the graph with the op methods,
// then call backward on a 1x1 loss node; parameter leaves accumulate into
// Parameter::grad. One tape per forward pass; clear() recycles storage.
class Tape {
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, const Mat&)> backprop;
  };

 public:
  const Mat& val(Var v) const { return nodes_[size_t(v.idx)].value; }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  Var input(Mat v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }
  Var leaf(Parameter& p) {
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    return push(std::move(n));
  }

  void backward(Var loss) {
    Node& top = nodes_[size_t(loss.idx)];
    if (top.value.size() != 1) throw ParameterError("Tape::backward: loss must be a 1x1 node");
    accum(loss, Mat::Constant(1, 1, 1.0));
    for (int64_t i = int64_t(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (!n.needs_grad || !n.grad_alloc) continue;
      if (n.param) n.param->grad += n.grad;
      if (n.backprop) n.backprop(*this, n.grad);
    }
  }

  // ---- binary ops ----

  Var matmul(Var a, Var b) {
    Mat v = val(a) * val(b);
    return make(std::move(v), {a, b}, [a, b](Tape& t, const Mat& g) {
      t.accum(a, g * t.val(b).transpose());
      t.accum(b, t.val(a).transpose() * g);
    });
  }
  Var add(Var a, Var b) {
    return make(val(a) + val(b), {a, b}, [a, b](Tape& t, const Mat& g) {
      t.accum(a, g);
      t.accum(b, g);
    });
  }
  Var sub(Var a, Var b) {
    return make(val(a) - val(b), {a, b}, [a, b](Tape& t, const Mat& g) {
      t.accum(a, g);
      t.accum(b, -g);
    });
  }
  Var mul(Var a, Var b) {
    return make(val(a).cwiseProduct(val(b)), {a, b}, [a, b](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseProduct(t.val(b)));
      t.accum(b, g.cwiseProduct(t.val(a)));
    });
  }
  /// Elementwise minimum; gradient routes to the smaller input (ties to a).
  Var cmin(Var a, Var b) {
    return make(val(a).cwiseMin(val(b)), {a, b}, [a, b](Tape& t, const Mat& g) {
      Mat take_a = (t.val(a).array() <= t.val(b).array()).cast<double>();
      t.accum(a, g.cwiseProduct(take_a));
      t.accum(b, g.cwiseProduct(Mat(1.0 - take_a.array())));
    });
  }
  /// a (BxN) + row (1xN), broadcast over rows.
  Var add_rowvec(Var a, Var row) {
    Mat v = val(a).rowwise() + val(row).row(0);
    return make(std::move(v), {a, row}, [a, row](Tape& t, const Mat& g) {
      t.accum(a, g);
      t.accum(row, g.colwise().sum());
    });
  }
  /// a (BxN) * row (1xN), broadcast over rows.
  Var mul_rowvec(Var a, Var row) {
    Mat v = val(a).array().rowwise() * val(row).row(0).array();
    return make(std::move(v), {a, row}, [a, row](Tape& t, const Mat& g) {
      t.accum(a, g.array().rowwise() * t.val(row).row(0).array());
      t.accum(row, g.cwiseProduct(t.val(a)).colwise().sum());
    });
  }
  /// a (BxN) + col (Bx1), broadcast over columns.
  Var add_colvec(Var a, Var col) {
    Mat v = val(a).array().colwise() + val(col).col(0).array();
    return make(std::move(v), {a, col}, [a, col](Tape& t, const Mat& g) {
      t.accum(a, g);
      t.accum(col, g.rowwise().sum());
    });
  }
  /// a (BxN) * col (Bx1), scaling each row by a scalar.
  Var mul_colvec(Var a, Var col) {
    Mat v = val(a).array().colwise() * val(col).col(0).array();
    return make(std::move(v), {a, col}, [a, col](Tape& t, const Mat& g) {
      t.accum(a, g.array().colwise() * t.val(col).col(0).array());
      t.accum(col, g.cwiseProduct(t.val(a)).rowwise().sum());
    });
  }

  // ---- scalar-argument ops ----

  Var scale(Var a, double c) {
    return make(val(a) * c, {a}, [a, c](Tape& t, const Mat& g) { t.accum(a, g * c); });
  }
  Var add_scalar(Var a, double c) {
    return make(Mat(val(a).array() + c), {a}, [a](Tape& t, const Mat& g) { t.accum(a, g); });
  }
  Var neg(Var a) { return scale(a, -1.0); }

  // ---- elementwise nonlinearities ----

  Var relu(Var a) {
    return make(val(a).cwiseMax(0.0), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseProduct(Mat((t.val(a).array() > 0.0).cast<double>())));
    });
  }
  Var tanh_(Var a) {
    Mat v = val(a).array().tanh();
    Var out = make(v, {a}, {});
    node(out).backprop = [a, out](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseProduct(Mat(1.0 - t.val(out).array().square())));
    };
    return out;
  }
  Var sigmoid(Var a) {
    Mat v = 1.0 / (1.0 + (-val(a).array()).exp());
    Var out = make(std::move(v), {a}, {});
    node(out).backprop = [a, out](Tape& t, const Mat& g) {
      auto s = t.val(out).array();
      t.accum(a, g.cwiseProduct(Mat(s * (1.0 - s))));
    };
    return out;
  }
  Var silu(Var a) {
    auto x = val(a).array();
    auto s = 1.0 / (1.0 + (-x).exp());
    return make(Mat(x * s), {a}, [a](Tape& t, const Mat& g) {
      auto x2 = t.val(a).array();
      auto s2 = 1.0 / (1.0 + (-x2).exp());
      t.accum(a, g.cwiseProduct(Mat(s2 * (1.0 + x2 * (1.0 - s2)))));
    });
  }
  // First derivative of silu as a primitive (used by the exact ODE trace);
  // its own derivative is silu'' = s(1-s)(2 + x(1-2s)).
  Var silu_deriv(Var a) {
    auto x = val(a).array();
    auto s = 1.0 / (1.0 + (-x).exp());
    return make(Mat(s * (1.0 + x * (1.0 - s))), {a}, [a](Tape& t, const Mat& g) {
      auto x2 = t.val(a).array();
      auto s2 = 1.0 / (1.0 + (-x2).exp());
      t.accum(a, g.cwiseProduct(Mat(s2 * (1.0 - s2) * (2.0 + x2 * (1.0 - 2.0 * s2)))));
    });
  }
  Var tanh_deriv(Var a) {
    auto th = val(a).array().tanh();
    return make(Mat(1.0 - th.square()), {a}, [a](Tape& t, const Mat& g) {
      auto th2 = t.val(a).array().tanh();
      t.accum(a, g.cwiseProduct(Mat(-2.0 * th2 * (1.0 - th2.square()))));
    });
  }
  Var exp_(Var a) {
    Var out = make(Mat(val(a).array().exp()), {a}, {});
    node(out).backprop = [a, out](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseProduct(t.val(out)));
    };
    return out;
  }
  Var log_(Var a) {
    return make(Mat(val(a).array().log()), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseQuotient(t.val(a)));
    });
  }
  Var softplus(Var a) {
    auto x = val(a).array();
    Mat v = x.max(0.0) + (-x.abs()).exp().log1p();
    return make(std::move(v), {a}, [a](Tape& t, const Mat& g) {
      auto s = 1.0 / (1.0 + (-t.val(a).array()).exp());
      t.accum(a, g.cwiseProduct(Mat(s)));
    });
  }
  Var square(Var a) {
    return make(Mat(val(a).array().square()), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, g.cwiseProduct(Mat(2.0 * t.val(a).array())));
    });
  }

  // ---- reductions ----

  Var sum(Var a) {
    return make(Mat::Constant(1, 1, val(a).sum()), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0)));
    });
  }
  Var mean(Var a) {
    double inv = 1.0 / double(val(a).size());
    return make(Mat::Constant(1, 1, val(a).sum() * inv), {a}, [a, inv](Tape& t, const Mat& g) {
      t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0) * inv));
    });
  }
  Var rowwise_sum(Var a) {
    Mat v = val(a).rowwise().sum();
    return make(std::move(v), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, g.col(0).replicate(1, t.val(a).cols()));
    });
  }
  Var colwise_sum(Var a) {
    Mat v = val(a).colwise().sum();
    return make(std::move(v), {a}, [a](Tape& t, const Mat& g) {
      t.accum(a, g.row(0).replicate(t.val(a).rows(), 1));
    });
  }
  /// Row-wise log(sum(exp(.))), numerically stable. Output Bx1.
  Var logsumexp_rows(Var a) {
    const Mat& x = val(a);
    Mat v(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) v(i, 0) = logsumexp(x.row(i).transpose());
    Var out = make(std::move(v), {a}, {});
    node(out).backprop = [a, out](Tape& t, const Mat& g) {
      const Mat& x2 = t.val(a);
      const Mat& l = t.val(out);
      Mat soft = (x2.array().colwise() - l.col(0).array()).exp();
      t.accum(a, soft.array().colwise() * g.col(0).array());
    };
    return out;
  }

  // ---- shape ops ----

  Var slice_cols(Var a, Eigen::Index j0, Eigen::Index n) {
    return make(val(a).middleCols(j0, n), {a}, [a, j0, n](Tape& t, const Mat& g) {
      Mat full = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      full.middleCols(j0, n) = g;
      t.accum(a, full);
    });
  }
  Var slice_rows(Var a, Eigen::Index i0, Eigen::Index n) {
    return make(val(a).middleRows(i0, n), {a}, [a, i0, n](Tape& t, const Mat& g) {
      Mat full = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      full.middleRows(i0, n) = g;
      t.accum(a, full);
    });
  }
  Var concat_cols(Var a, Var b) {
    Mat v(val(a).rows(), val(a).cols() + val(b).cols());
    v << val(a), val(b);
    return make(std::move(v), {a, b}, [a, b](Tape& t, const Mat& g) {
      t.accum(a, g.leftCols(t.val(a).cols()));
      t.accum(b, g.rightCols(t.val(b).cols()));
    });
  }
  Var transpose(Var a) {
    return make(val(a).transpose(), {a},
                [a](Tape& t, const Mat& g) { t.accum(a, g.transpose()); });
  }

  void accum(Var v, const Mat& g) {
    Node& n = nodes_[size_t(v.idx)];
    if (!n.needs_grad) return;
    if (!n.grad_alloc) {
      n.grad = g;
      n.grad_alloc = true;
    } else {
      n.grad += g;
    }
  }

 private:
  Node& node(Var v) { return nodes_[size_t(v.idx)]; }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{int32_t(nodes_.size() - 1)};
  }

  Var make(Mat value, std::initializer_list<Var> parents,
           std::function<void(Tape&, const Mat&)> backprop) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) n.needs_grad |= nodes_[size_t(p.idx)].needs_grad;
    if (n.needs_grad) n.backprop = std::move(backprop);
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
};

}  // namespace gormpo::nn
