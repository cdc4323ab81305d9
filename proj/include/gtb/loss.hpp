#pragma once

#include "gtb/autograd.hpp"

namespace gtb {

/// max(x,0) - x*y + log(1 + exp(-|x|)) for one logit/target pair.
double bce_with_logits_term(double logit, double target);

/// Mean binary cross-entropy over every element of [B,K] logits, computed
/// from logits in the overflow-free form. Targets must be 0 or 1.
/// Gradient w.r.t. logits is (sigmoid(x) - y) / (B*K).
Var bce_with_logits(Var logits, Var targets);

}  // namespace gtb
