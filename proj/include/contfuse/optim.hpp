#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "contfuse/tensor.hpp"

namespace contfuse {

struct AdamOptions {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.0;
};

/// Adam with bias correction. Moments are owned per parameter slot, so the
/// optimizer must see the same parameter list (same order) on every step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step() {
    for (const Tensor& p : params_)
      if (!p.has_grad()) throw ContractError("adam_step: parameter without a gradient");
    ++t_;
    const Real bc1 = 1.0 - std::pow(opts_.beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(opts_.beta2, static_cast<Real>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      auto w = p.data();
      auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const Real gj = g[j] + opts_.weight_decay * w[j];
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
        const Real mhat = m[j] / bc1;
        const Real vhat = v[j] / bc2;
        w[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  Real lr() const { return opts_.lr; }
  void set_lr(Real lr) { opts_.lr = lr; }
  const AdamOptions& options() const { return opts_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::vector<std::vector<Real>> m_, v_;
  std::int64_t t_ = 0;
};

/// Single in-place Adam update on a fresh optimizer state (t = 1).
inline void adam_step(std::vector<Tensor> params, Real lr, Real beta1, Real beta2, Real eps) {
  Adam opt(std::move(params), {lr, beta1, beta2, eps, 0.0});
  opt.step();
}

}  // namespace contfuse
