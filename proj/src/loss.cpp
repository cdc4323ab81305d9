#include "gtb/loss.hpp"

#include <cmath>

#include "gtb/error.hpp"

namespace gtb {

double bce_with_logits_term(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

Var bce_with_logits(Var logits, Var targets) {
  const Tensor& x = logits.value();
  const Tensor& y = targets.value();
  require_same_shape(x, y, "bce_with_logits");
  for (double t : y.values())
    if (t != 0.0 && t != 1.0) throw ContractError("bce_with_logits: targets must be 0 or 1");

  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += bce_with_logits_term(x[i], y[i]);

  const std::size_t xi = logits.id(), yi = targets.id();
  return logits.tape().record(OpKind::BceWithLogits, {logits, targets}, Tensor::scalar(acc / n),
                              [xi, yi, n](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                                if (!pg[0]) return;
                                const Tensor& xv = t.value(xi);
                                const Tensor& yv = t.value(yi);
                                const double s = g[0] / n;
                                for (std::size_t i = 0; i < xv.size(); ++i)
                                  (*pg[0])[i] += s * (stable_sigmoid(xv[i]) - yv[i]);
                              });
}

}  // namespace gtb
