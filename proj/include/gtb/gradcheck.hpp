#pragma once

#include <functional>
#include <span>
#include <vector>

#include "gtb/autograd.hpp"

namespace gtb {

/// Builds a scalar on the given tape from leaves holding the parameter values.
/// Must be deterministic: it is evaluated once for the analytic gradient and
/// twice per coordinate for the central differences.
using ScalarFn = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients with central differences
/// (f(p + eps e_i) - f(p - eps e_i)) / (2 eps). Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-12); the maximum over all coordinates is reported.
GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Tensor>& params, double eps);

double grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps);

}  // namespace gtb
