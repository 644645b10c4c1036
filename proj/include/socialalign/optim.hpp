#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "socialalign/errors.hpp"
#include "socialalign/tensor.hpp"

namespace socialalign {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Moment buffers are owned here and
// shape-checked against their parameters at every step.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Tensor& p : params_) {
      if (!p.requires_grad()) throw ContractError("AdamW: parameter without gradient tracking");
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  std::size_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }
  AdamWConfig& config() { return cfg_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor& p = params_[pi];
      const double* g = p.grad();
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      double* w = p.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace socialalign
