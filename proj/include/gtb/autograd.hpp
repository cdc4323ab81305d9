#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gtb/tensor.hpp"

namespace gtb {

class Tape;

enum class OpKind {
  Leaf,
  Add,
  Mul,
  Scale,
  Relu,
  Sigmoid,
  GlobalAvgPool,
  Conv2d,
  MatMul,
  AddBias,
  Sum,
  Mean,
  BatchNorm,
  BceWithLogits,
  Quantize,
};

const char* op_name(OpKind kind);

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient w.r.t. every requires_grad leaf, keyed by node id.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  const Tensor& at(std::size_t node_id) const;
  bool contains(Var leaf) const { return by_node_.count(leaf.id()) != 0; }
  std::size_t size() const noexcept { return by_node_.size(); }
  const std::map<std::size_t, Tensor>& all() const noexcept { return by_node_; }

 private:
  friend class Tape;
  std::map<std::size_t, Tensor> by_node_;
};

/// Append-only record of a computation. Parents of node k always have ids < k,
/// so a reverse sweep over the node list is a valid topological order.
class Tape {
 public:
  /// Accumulates (+=) the contribution of grad_out into each non-null parent gradient.
  using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op node. Used by the built-in ops and by modules that define
  /// fused ops of their own (batch norm, losses, quantization).
  Var record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  const std::vector<std::size_t>& parents(Var v) const { return nodes_.at(v.id()).parents; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Leaves the loss does not depend on get zero gradients.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> parents;
    Tensor value;
    bool is_leaf;
    bool needs_grad;
    BackwardFn backward;
  };
  void check_owned(Var v, const char* op) const;

  std::vector<Node> nodes_;
};

// Differentiable ops. Shapes are checked; the only broadcasting is a
// one-element operand in add/mul.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var relu(Var x);
Var sigmoid(Var x);
Var global_avg_pool(Var x);  // [B,C,H,W] -> [B,C]
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);  // [B,N] + [N]
Var sum(Var x);
Var mean(Var x);

/// Numerically stable logistic function.
double stable_sigmoid(double x);

/// Forward-only convolution used by the op above; exposed for tests and benchmarks.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

}  // namespace gtb
