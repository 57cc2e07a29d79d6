#pragma once

#include "autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace anoncomplete {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay applied to every parameter:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * p
template <class T>
class AdamW {
 public:
  AdamW(const std::vector<Parameter<T>>& params, AdamWConfig cfg) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::int64_t steps() const noexcept { return step_; }

  void step(std::vector<Parameter<T>>& params, double lr) {
    if (params.size() != m_.size()) throw std::invalid_argument("AdamW: parameter list changed");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        const double x = static_cast<double>(p.value[j]);
        p.value[j] = static_cast<T>(x - lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps)) - lr * cfg_.weight_decay * x);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

/// Learning rate after `epoch` completed epochs: lr0 * decay^epoch.
inline double scheduled_lr(double lr0, double decay, int epoch) { return lr0 * std::pow(decay, epoch); }

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
template <class T>
double clip_global_norm(std::vector<Parameter<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (auto g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<T>(max_norm / norm);
    for (auto& p : params) {
      for (auto& g : p.grad) g *= s;
    }
  }
  return norm;
}

}  // namespace anoncomplete
