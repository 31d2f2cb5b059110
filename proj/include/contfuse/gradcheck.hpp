#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "contfuse/tensor.hpp"

namespace contfuse {

struct GradCheckOptions {
  Real step = 1e-5;
  Real tolerance = 1e-4;
  /// 0 → perturb every element; otherwise check this many random directions.
  int directions = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  Real max_rel_error = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// Element mode compares whole gradient tensors by ‖analytic − numeric‖ / max(‖analytic‖,
/// ‖numeric‖). Direction mode compares ⟨grad, v⟩ with (f(x + h v) − f(x − h v)) / 2h for
/// random unit directions v spanning all inputs jointly, which scales to full models.
inline GradCheckResult check_gradients(const std::string& name,
                                       const std::function<Tensor()>& loss_fn,
                                       std::vector<Tensor> inputs, GradCheckOptions opts = {}) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());

  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };

  GradCheckResult result{name, 0.0, false};
  if (opts.directions == 0) {
    for (Tensor& t : inputs) {
      std::vector<Real> analytic(t.grad().begin(), t.grad().end());
      Real diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i = 0; i < t.numel(); ++i) {
        const Real orig = t[i];
        t[i] = orig + opts.step;
        const Real fp = eval();
        t[i] = orig - opts.step;
        const Real fm = eval();
        t[i] = orig;
        const Real numeric = (fp - fm) / (2.0 * opts.step);
        diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
      }
      const Real denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
      const Real rel = std::sqrt(diff2) / denom;
      result.max_rel_error = std::max(result.max_rel_error, rel);
    }
  } else {
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<Real> normal(0.0, 1.0);
    for (int d = 0; d < opts.directions; ++d) {
      std::vector<std::vector<Real>> dir;
      Real norm2 = 0.0;
      for (const Tensor& t : inputs) {
        dir.emplace_back(t.numel());
        for (Real& v : dir.back()) {
          v = normal(rng);
          norm2 += v * v;
        }
      }
      const Real inv = 1.0 / std::sqrt(norm2);
      Real analytic = 0.0;
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto g = inputs[k].grad();
        for (std::size_t i = 0; i < dir[k].size(); ++i) {
          dir[k][i] *= inv;
          analytic += g[i] * dir[k][i];
        }
      }
      auto shift = [&](Real h) {
        for (std::size_t k = 0; k < inputs.size(); ++k)
          for (std::size_t i = 0; i < dir[k].size(); ++i) inputs[k][i] += h * dir[k][i];
      };
      std::vector<std::vector<Real>> saved;
      for (const Tensor& t : inputs) saved.emplace_back(t.values());
      shift(opts.step);
      const Real fp = eval();
      for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].values() = saved[k];
      shift(-opts.step);
      const Real fm = eval();
      for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].values() = saved[k];
      const Real numeric = (fp - fm) / (2.0 * opts.step);
      const Real denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    }
  }
  result.passed = result.max_rel_error < opts.tolerance;
  return result;
}

}  // namespace contfuse
