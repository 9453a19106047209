#pragma once

#include "gormpo/density/cnf.hpp"
#include "gormpo/density/ddpm.hpp"
#include "gormpo/density/estimator.hpp"
#include "gormpo/density/kde.hpp"
#include "gormpo/density/realnvp.hpp"
#include "gormpo/density/vae.hpp"

namespace gormpo::density {

inline const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names = {"kde", "vae", "realnvp", "ddpm", "cnf"};
  return names;
}

inline std::unique_ptr<DensityEstimator> make_estimator(const std::string& family) {
  if (family == "kde") return std::make_unique<KdeEstimator>();
  if (family == "vae") return std::make_unique<VaeEstimator>();
  if (family == "realnvp") return std::make_unique<RealNvpEstimator>();
  if (family == "ddpm") return std::make_unique<DdpmEstimator>();
  if (family == "cnf") return std::make_unique<CnfEstimator>();
  throw ParameterError("unknown density estimator family '" + family + "'");
}

/// Family-specific training defaults (schedules differ per family).
inline FitConfig default_fit_config(const std::string& family) {
  FitConfig cfg;
  if (family == "vae" || family == "realnvp") {
    cfg.max_epochs = 100;
    cfg.batch_size = 256;
    cfg.lr = 1e-3;
    cfg.patience = 15;
    cfg.lr_patience = 7;  // patience // 2
  } else if (family == "ddpm") {
    cfg.max_epochs = 50;
    cfg.batch_size = 512;
    cfg.lr = 2e-4;
    cfg.weight_decay = 1e-6;
    cfg.patience = 0;
    cfg.lr_patience = 0;
  } else if (family == "cnf") {
    cfg.max_epochs = 20;
    cfg.batch_size = 512;
    cfg.lr = 1e-3;
    cfg.weight_decay = 1e-4;
    cfg.patience = 0;
    cfg.lr_patience = 0;
  }
  return cfg;
}

inline std::unique_ptr<DensityEstimator> load_density(const std::string& path) {
  ArrayFile af = ArrayFile::load(path, 1);
  auto model = make_estimator(af.get_string("family"));
  model->load_common(af);
  return model;
}

}  // namespace gormpo::density
