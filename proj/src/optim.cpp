#include "gtb/optim.hpp"

#include <cmath>

#include "gtb/error.hpp"

namespace gtb {

bool all_finite(const std::map<std::string, Tensor>& tensors) {
  for (const auto& [_, t] : tensors)
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    require_same_shape(p, it->second, "adam_step");
  }
  if (!all_finite(grads)) throw OverflowError("adam_step: non-finite gradient");

  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != p.size()) m.assign(p.size(), 0.0);
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

double scheduler_lr(double lr0, const SchedulerConfig& scheduler, int epoch) {
  if (epoch < 0) throw ContractError("scheduler_lr: epoch must be non-negative");
  if (scheduler.kind == SchedulerConfig::Kind::None) return lr0;
  if (scheduler.step_size < 1) throw ConfigError("scheduler: step_size must be at least 1");
  double lr = lr0;
  for (int k = 0; k < epoch / scheduler.step_size; ++k) lr *= scheduler.gamma;
  return lr;
}

}  // namespace gtb
