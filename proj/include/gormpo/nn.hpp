#pragma once

#include "gormpo/io.hpp"
#include "gormpo/tape.hpp"

#include <memory>
#include <string>
#include <vector>

namespace gormpo::nn {

enum class Act { Identity, ReLU, Tanh, SiLU };

inline Var apply_act(Tape& t, Var x, Act act) {
  switch (act) {
    case Act::ReLU: return t.relu(x);
    case Act::Tanh: return t.tanh_(x);
    case Act::SiLU: return t.silu(x);
    default: return x;
  }
}

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  void init(Eigen::Index in, Eigen::Index out, RngStream& rng, bool zero = false) {
    if (zero) {
      weight = Parameter(Mat::Zero(in, out));
    } else {
      double bound = std::sqrt(6.0 / double(in + out));
      weight = Parameter(rng.uniform_mat(in, out, -bound, bound));
    }
    bias = Parameter(Mat::Zero(1, out));
  }
  Var forward(Tape& t, Var x) const {
    return t.add_rowvec(t.matmul(x, t.leaf(const_cast<Parameter&>(weight))),
                        t.leaf(const_cast<Parameter&>(bias)));
  }
};

// Plain fully connected network: hidden layers share one activation, the
// output layer is linear. zero_init_last gives an exactly-zero output at
// initialization (identity coupling layers, frozen velocity fields).
struct Mlp {
  std::vector<Linear> layers;
  Act hidden_act = Act::ReLU;

  void init(Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out,
            Act act, RngStream& rng, bool zero_init_last = false) {
    hidden_act = act;
    layers.clear();
    Eigen::Index prev = in;
    for (Eigen::Index h : hidden) {
      Linear l;
      l.init(prev, h, rng);
      layers.push_back(std::move(l));
      prev = h;
    }
    Linear head;
    head.init(prev, out, rng, zero_init_last);
    layers.push_back(std::move(head));
  }

  Var forward(Tape& t, Var x) const {
    Var h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i)
      h = apply_act(t, layers[i].forward(t, h), hidden_act);
    return layers.back().forward(t, h);
  }

  /// Forward pass without a tape (inference fast path).
  Mat forward_plain(const Mat& x) const {
    Mat h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
      h = (h * layers[i].weight.value).rowwise() + layers[i].bias.value.row(0);
      switch (hidden_act) {
        case Act::ReLU: h = h.cwiseMax(0.0); break;
        case Act::Tanh: h = h.array().tanh(); break;
        case Act::SiLU: h = h.array() * (1.0 / (1.0 + (-h.array()).exp())); break;
        default: break;
      }
    }
    return (h * layers.back().weight.value).rowwise() + layers.back().bias.value.row(0);
  }

  std::vector<Parameter*> params() {
    std::vector<Parameter*> ps;
    for (auto& l : layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  Eigen::Index in_dim() const { return layers.front().weight.value.rows(); }
  Eigen::Index out_dim() const { return layers.back().weight.value.cols(); }
};

// Adam with optional decoupled weight decay (AdamW when weight_decay > 0).
class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(std::vector<Parameter*> params, Config cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      if (cfg_.weight_decay > 0.0) p.value -= cfg_.lr * cfg_.weight_decay * p.value;
      p.value -= cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

 private:
  std::vector<Parameter*> params_;
  Config cfg_;
  std::vector<Mat> m_, v_;
  int64_t t_ = 0;
};

inline void check_finite_loss(double loss, const std::string& where) {
  if (!std::isfinite(loss)) throw TrainingError(where + ": non-finite loss");
}

// ---- checkpoint helpers ----

inline void put_mlp(ArrayFile& af, const std::string& prefix, const Mlp& mlp) {
  af.put_scalar(prefix + ".n_layers", double(mlp.layers.size()));
  af.put_scalar(prefix + ".act", double(int(mlp.hidden_act)));
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    af.put_f64(prefix + ".w" + std::to_string(i), mlp.layers[i].weight.value);
    af.put_f64(prefix + ".b" + std::to_string(i), mlp.layers[i].bias.value);
  }
}

inline Mlp get_mlp(const ArrayFile& af, const std::string& prefix) {
  Mlp mlp;
  auto n = size_t(af.get_scalar(prefix + ".n_layers"));
  mlp.hidden_act = Act(int(af.get_scalar(prefix + ".act")));
  for (size_t i = 0; i < n; ++i) {
    Linear l;
    l.weight = Parameter(af.get_mat(prefix + ".w" + std::to_string(i)));
    l.bias = Parameter(af.get_mat(prefix + ".b" + std::to_string(i)));
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

/// Snapshot of parameter values, for best-epoch restore during early stopping.
inline std::vector<Mat> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Mat> s;
  s.reserve(params.size());
  for (auto* p : params) s.push_back(p->value);
  return s;
}
inline void restore(const std::vector<Parameter*>& params, const std::vector<Mat>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace gormpo::nn
