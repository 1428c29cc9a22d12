#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "softmcl/autodiff.hpp"

namespace softmcl {

// Scalar function of a set of parameter tensors, evaluated on a fresh tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
  // Non-empty when f was non-finite at a perturbed point.
  std::string failure;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-6;
  // 0 checks every coordinate; otherwise an evenly strided subset per tensor.
  std::size_t max_coords_per_param = 0;
};

// Compares reverse-mode gradients with central finite differences
// (f(x+eps) - f(x-eps)) / (2 eps). Relative error per coordinate is
// |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, const GradCheckOptions& opts);

// Analytic gradients of f at params, one tensor per parameter.
std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Tensor>& params);

}  // namespace softmcl
