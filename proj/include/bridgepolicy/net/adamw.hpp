#pragma once

#include <cmath>
#include <vector>

#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/net/tape.hpp"

namespace bridgepolicy::net {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-6;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg.lr > 0.0) || cfg.weight_decay < 0.0 || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
        !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) || !(cfg.eps > 0.0))
      throw ConfigError("invalid AdamW hyperparameters");
  }

  void step(ParamStore& store) {
    if (m_.empty()) {
      for (std::size_t i = 0; i < store.size(); ++i) {
        m_.push_back(Mat::Zero(store.at(i).value.rows(), store.at(i).value.cols()));
        v_.push_back(m_.back());
      }
    }
    if (m_.size() != store.size()) throw DomainError("AdamW: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      Parameter& p = store.at(i);
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || m_[i].size() != p.value.size())
        throw DomainError("AdamW: shape mismatch for " + store.name(i));
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
      p.value *= 1.0 - cfg_.lr * cfg_.weight_decay;
      p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }

  /// Restores optimizer state (for resuming from a checkpoint).
  void restore(long t, std::vector<Mat> m, std::vector<Mat> v) {
    if (m.size() != v.size()) throw DomainError("AdamW: moment count mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace bridgepolicy::net
