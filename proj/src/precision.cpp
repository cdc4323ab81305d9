#include "gtb/precision.hpp"

#include <cmath>
#include <limits>

#include "gtb/error.hpp"

namespace gtb {

double quantize_binary16(double x) {
  if (!std::isfinite(x) || x == 0.0) return x;
  constexpr double kMaxHalf = 65504.0;
  const double mag = std::abs(x);
  // Spacing of binary16 values around |x|: 2^-24 in the subnormal range,
  // otherwise 2^(e-10) for |x| in [2^e, 2^(e+1)).
  int exp2 = 0;
  std::frexp(mag, &exp2);  // mag = f * 2^exp2, f in [0.5, 1)
  const int e = std::max(exp2 - 1, -14);
  const double quantum = std::ldexp(1.0, e - 10);
  const double r = std::nearbyint(mag / quantum) * quantum;
  if (r > kMaxHalf) return std::copysign(std::numeric_limits<double>::infinity(), x);
  return std::copysign(r, x);
}

std::vector<double> quantize_binary16(std::span<const double> xs) {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = quantize_binary16(xs[i]);
  return out;
}

Var quantize(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = quantize_binary16(v);
  return x.tape().record(OpKind::Quantize, {x}, std::move(out),
                         [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += quantize_binary16(g[i]);
                         });
}

LossScaler::LossScaler(double initial_scale, int growth_interval)
    : scale_(initial_scale), growth_interval_(growth_interval) {
  if (!(initial_scale > 0.0)) throw ConfigError("loss scale must be positive");
  if (growth_interval < 1) throw ConfigError("loss scale growth interval must be at least 1");
}

void LossScaler::on_clean_step() {
  if (++clean_steps_ >= growth_interval_) {
    scale_ *= 2.0;
    clean_steps_ = 0;
  }
}

void LossScaler::on_overflow() {
  scale_ *= 0.5;
  clean_steps_ = 0;
  if (scale_ < kMinScale)
    throw OverflowError("persistent overflow: loss scale fell below 2^-20");
}

}  // namespace gtb
