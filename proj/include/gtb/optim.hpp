#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gtb/tensor.hpp"

namespace gtb {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of every named parameter. All gradients are
/// checked first: a non-finite entry raises OverflowError and nothing changes.
void adam_step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr);

bool all_finite(const std::map<std::string, Tensor>& tensors);

struct SchedulerConfig {
  enum class Kind { None, Step };
  Kind kind = Kind::None;
  int step_size = 10;
  double gamma = 0.1;
  bool operator==(const SchedulerConfig&) const = default;
};

/// none: lr0. step(s, g): lr0 * g^floor(epoch / s), applied as repeated
/// multiplication so decades of 0.1 land on the nearest doubles.
double scheduler_lr(double lr0, const SchedulerConfig& scheduler, int epoch);

}  // namespace gtb
