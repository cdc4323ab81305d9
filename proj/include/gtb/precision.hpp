#pragma once

#include <span>
#include <vector>

#include "gtb/autograd.hpp"

namespace gtb {

/// Rounds to the nearest IEEE 754 binary16 value (ties to even) and widens
/// back to double. Out-of-range magnitudes become +-infinity; subnormals are kept.
double quantize_binary16(double x);
std::vector<double> quantize_binary16(std::span<const double> xs);

/// Tape op: binary16 rounding on the way forward and on the gradient coming back.
Var quantize(Var x);

/// Dynamic loss scale: halves on overflow, doubles after growth_interval
/// consecutive clean steps.
class LossScaler {
 public:
  static constexpr double kMinScale = 1.0 / (1 << 20);

  explicit LossScaler(double initial_scale = 1024.0, int growth_interval = 200);

  double scale() const noexcept { return scale_; }
  int growth_interval() const noexcept { return growth_interval_; }
  int steps_since_overflow() const noexcept { return clean_steps_; }

  void on_clean_step();
  /// Throws OverflowError once the scale drops below kMinScale.
  void on_overflow();

  bool operator==(const LossScaler&) const = default;

 private:
  double scale_;
  int growth_interval_;
  int clean_steps_ = 0;
};

}  // namespace gtb
