#include "softmcl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "softmcl/errors.hpp"

namespace softmcl {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

std::vector<Tensor> analytic_gradients(const ScalarFn& f, const std::vector<Tensor>& params) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.variable(p));
  ad::Var out = f(tape, vars);
  tape.backward(out);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (const ad::Var& v : vars) grads.push_back(v.grad());
  return grads;
}

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw ParameterError("grad_check: eps must be positive");
  GradCheckReport report;
  const std::vector<Tensor> analytic = analytic_gradients(f, params);
  std::vector<Tensor> probe = params;

  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].size();
    std::size_t stride = 1;
    if (opts.max_coords_per_param > 0 && n > opts.max_coords_per_param) {
      stride = (n + opts.max_coords_per_param - 1) / opts.max_coords_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = params[p][i];
      double f_plus = 0.0, f_minus = 0.0;
      try {
        probe[p][i] = orig + opts.eps;
        f_plus = evaluate(f, probe);
        probe[p][i] = orig - opts.eps;
        f_minus = evaluate(f, probe);
      } catch (const NumericError&) {
        f_plus = std::numeric_limits<double>::quiet_NaN();
      }
      probe[p][i] = orig;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        report.failure = "non-finite f at param " + std::to_string(p) + " index " + std::to_string(i);
        report.worst_param = p;
        report.worst_index = i;
        report.passed = false;
        return report;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace softmcl
