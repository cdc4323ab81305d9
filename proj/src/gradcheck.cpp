#include "gtb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gtb/error.hpp"

namespace gtb {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p, true));
    const Gradients grads = tape.backward(f(tape, vars));
    for (const auto& v : vars) analytic.push_back(grads[v]);
  }

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      probe[p][i] = orig + eps;
      const double up = evaluate(f, probe);
      probe[p][i] = orig - eps;
      const double down = evaluate(f, probe);
      probe[p][i] = orig;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
      ++report.coordinates;
      if (rel > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  return grad_check_report(f, params, eps).max_rel_error;
}

}  // namespace gtb
