#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mman/tensor.hpp"

namespace mman {

// Relative-error floor: |a - n| / max(|a|, |n|, kGradCheckDenomFloor).
inline constexpr double kGradCheckDenomFloor = 1e-3;

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Central finite differences against reverse-mode gradients. `f` must rebuild
// its graph from the given leaf tensors on every call and return a scalar.
// Double precision only; leaves are perturbed in place and restored.
inline GradCheckReport check_gradients(
    const std::string& op,
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> leaves, double step = 1e-5, double tol = 1e-4) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = f(leaves);
  loss.backward();

  GradCheckReport report{op, 0.0, tol, false};
  for (auto& leaf : leaves) {
    const std::vector<double> analytic = leaf.grad_vector();
    double* vals = leaf.mutable_data();
    for (std::int64_t i = 0; i < leaf.numel(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = f(leaves).item();
      vals[i] = saved - step;
      const double down = f(leaves).item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(i)];
      const double denom =
          std::max({std::fabs(a), std::fabs(numeric), kGradCheckDenomFloor});
      report.max_rel_error = std::max(report.max_rel_error,
                                      std::fabs(a - numeric) / denom);
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace mman
