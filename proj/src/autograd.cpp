#include "gtb/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "gtb/error.hpp"

namespace gtb {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::Quantize: return "quantize";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(*this); }

const Tensor& Gradients::operator[](Var leaf) const { return at(leaf.id()); }

const Tensor& Gradients::at(std::size_t node_id) const {
  auto it = by_node_.find(node_id);
  if (it == by_node_.end())
    throw ContractError("no gradient for node " + std::to_string(node_id) + " (not a requires_grad leaf)");
  return it->second;
}

void Tape::check_owned(Var v, const char* op) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size())
    throw ContractError(std::string(op) + ": operand does not belong to this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), true, requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward) {
  std::vector<std::size_t> ids;
  ids.reserve(parents.size());
  bool needs = false;
  for (const auto& p : parents) {
    check_owned(p, op_name(kind));
    ids.push_back(p.id());
    needs = needs || nodes_[p.id()].needs_grad;
  }
  nodes_.push_back(Node{kind, std::move(ids), std::move(value), false, needs, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  check_owned(loss, "backward");
  if (value(loss).size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));

  std::vector<Tensor> grads(nodes_.size());
  if (nodes_[loss.id()].needs_grad) grads[loss.id()] = Tensor(value(loss).shape(), 1.0);

  std::vector<Tensor*> parent_ptrs;
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    const Node& node = nodes_[k];
    if (node.is_leaf || !node.needs_grad || grads[k].size() == 0) continue;
    parent_ptrs.assign(node.parents.size(), nullptr);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      const std::size_t pid = node.parents[p];
      if (!nodes_[pid].needs_grad) continue;
      if (grads[pid].size() == 0) grads[pid] = Tensor(nodes_[pid].value.shape(), 0.0);
      parent_ptrs[p] = &grads[pid];
    }
    node.backward(*this, grads[k], parent_ptrs);
  }

  Gradients out;
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& node = nodes_[k];
    if (!node.is_leaf || !node.needs_grad) continue;
    out.by_node_.emplace(k, grads[k].size() ? std::move(grads[k]) : Tensor(node.value.shape(), 0.0));
  }
  return out;
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
    throw ContractError(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

// i in [lo, hi) such that 0 <= i*stride + offset < in_len and i < out_len.
std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t offset, std::ptrdiff_t stride,
                                                      std::ptrdiff_t in_len, std::ptrdiff_t out_len) {
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  std::ptrdiff_t top = in_len - 1 - offset;
  if (top < 0) return {0, 0};
  std::ptrdiff_t hi = std::min(out_len, top / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct ConvGeom {
  std::size_t B, C, H, W, F, KH, KW, OH, OW, stride, pad;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4)
    throw DimensionError("conv2d: expected 4-d input and kernel, got " + shape_str(input.shape()) + " and " +
                         shape_str(kernel.shape()));
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  ConvGeom g{};
  g.B = input.dim(0);
  g.C = input.dim(1);
  g.H = input.dim(2);
  g.W = input.dim(3);
  g.F = kernel.dim(0);
  g.KH = kernel.dim(2);
  g.KW = kernel.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernel.dim(1) != g.C || g.KH > g.H + 2 * padding || g.KW > g.W + 2 * padding)
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()) + " (padding " + std::to_string(padding) + ")");
  g.OH = (g.H + 2 * padding - g.KH) / stride + 1;
  g.OW = (g.W + 2 * padding - g.KW) / stride + 1;
  return g;
}

}  // namespace

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return tape.record(OpKind::Add, {a, b}, std::move(out),
                       [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                         for (Tensor* t : pg)
                           if (t)
                             for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
                       });
  }
  const bool a_scalar = av.size() == 1;
  if (!a_scalar && bv.size() != 1)
    throw DimensionError("add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const Tensor& big = a_scalar ? bv : av;
  const double s = a_scalar ? av[0] : bv[0];
  Tensor out = big;
  for (auto& x : out.values()) x += s;
  return tape.record(OpKind::Add, {a, b}, std::move(out),
                     [a_scalar](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                       Tensor* gs = a_scalar ? pg[0] : pg[1];
                       Tensor* gb = a_scalar ? pg[1] : pg[0];
                       if (gb)
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                       if (gs) {
                         double acc = 0.0;
                         for (double x : g.values()) acc += x;
                         (*gs)[0] += acc;
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return tape.record(OpKind::Mul, {a, b}, std::move(out),
                       [ia, ib](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                         const Tensor& x = t.value(ia);
                         const Tensor& y = t.value(ib);
                         if (pg[0])
                           for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i];
                         if (pg[1])
                           for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * x[i];
                       });
  }
  const bool a_scalar = av.size() == 1;
  if (!a_scalar && bv.size() != 1)
    throw DimensionError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::size_t is = a_scalar ? ia : ib;
  const std::size_t it = a_scalar ? ib : ia;
  Tensor out = a_scalar ? bv : av;
  const double s = a_scalar ? av[0] : bv[0];
  for (auto& x : out.values()) x *= s;
  return tape.record(OpKind::Mul, {a, b}, std::move(out),
                     [a_scalar, is, it](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                       Tensor* gs = a_scalar ? pg[0] : pg[1];
                       Tensor* gb = a_scalar ? pg[1] : pg[0];
                       const double s = t.value(is)[0];
                       const Tensor& big = t.value(it);
                       if (gb)
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * s;
                       if (gs) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * big[i];
                         (*gs)[0] += acc;
                       }
                     });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return x.tape().record(OpKind::Scale, {x}, std::move(out),
                         [factor](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (pg[0])
                             for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * factor;
                         });
}

Var relu(Var x) {
  Tensor out = x.value();
  std::vector<bool> mask(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = out[i] > 0.0;  // derivative at exactly 0 is 0
    if (!mask[i]) out[i] = 0.0;
  }
  return x.tape().record(OpKind::Relu, {x}, std::move(out),
                         [mask = std::move(mask)](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (mask[i]) (*pg[0])[i] += g[i];
                         });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = stable_sigmoid(v);
  Tape& tape = x.tape();
  const std::size_t self = tape.size();
  return tape.record(OpKind::Sigmoid, {x}, std::move(out),
                     [self](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                       if (!pg[0]) return;
                       const Tensor& y = t.value(self);
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * y[i] * (1.0 - y[i]);
                     });
}

Var global_avg_pool(Var x) {
  const Tensor& in = x.value();
  if (in.rank() != 4) throw DimensionError("global_avg_pool: expected [B,C,H,W], got " + shape_str(in.shape()));
  const std::size_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  Tensor out({B, C});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    for (std::size_t k = 0; k < HW; ++k) acc += in[bc * HW + k];
    out[bc] = acc / static_cast<double>(HW);
  }
  return x.tape().record(OpKind::GlobalAvgPool, {x}, std::move(out),
                         [HW](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           const double inv = 1.0 / static_cast<double>(HW);
                           for (std::size_t bc = 0; bc < g.size(); ++bc) {
                             const double v = g[bc] * inv;
                             for (std::size_t k = 0; k < HW; ++k) (*pg[0])[bc * HW + k] += v;
                           }
                         });
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const ConvGeom g = conv_geometry(input, kernel, stride, padding);
  Tensor out({g.B, g.F, g.OH, g.OW});
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto p = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t b = 0; b < g.B; ++b) {
    for (std::size_t f = 0; f < g.F; ++f) {
      double* o = &out[(b * g.F + f) * g.OH * g.OW];
      for (std::size_t c = 0; c < g.C; ++c) {
        const double* in = input.data().data() + (b * g.C + c) * g.H * g.W;
        const double* k = kernel.data().data() + (f * g.C + c) * g.KH * g.KW;
        for (std::size_t u = 0; u < g.KH; ++u) {
          const auto [i0, i1] = valid_range(static_cast<std::ptrdiff_t>(u) - p, s, g.H, g.OH);
          for (std::size_t v = 0; v < g.KW; ++v) {
            const double w = k[u * g.KW + v];
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(v) - p;
            const auto [j0, j1] = valid_range(off, s, g.W, g.OW);
            for (std::ptrdiff_t i = i0; i < i1; ++i) {
              const double* row = in + (i * s + static_cast<std::ptrdiff_t>(u) - p) * static_cast<std::ptrdiff_t>(g.W);
              double* orow = o + i * static_cast<std::ptrdiff_t>(g.OW);
              for (std::ptrdiff_t j = j0; j < j1; ++j) orow[j] += w * row[j * s + off];
            }
          }
        }
      }
    }
  }
  return out;
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
  Tape& tape = same_tape(input, kernel, "conv2d");
  Tensor out = conv2d_forward(input.value(), kernel.value(), stride, padding);
  const std::size_t ii = input.id(), ik = kernel.id();
  return tape.record(
      OpKind::Conv2d, {input, kernel}, std::move(out),
      [ii, ik, stride, padding](const Tape& t, const Tensor& grad, std::span<Tensor* const> pg) {
        const Tensor& x = t.value(ii);
        const Tensor& kern = t.value(ik);
        const ConvGeom g = conv_geometry(x, kern, stride, padding);
        const auto s = static_cast<std::ptrdiff_t>(g.stride);
        const auto p = static_cast<std::ptrdiff_t>(g.pad);
        Tensor* gx = pg[0];
        Tensor* gk = pg[1];
        for (std::size_t b = 0; b < g.B; ++b) {
          for (std::size_t f = 0; f < g.F; ++f) {
            const double* go = grad.data().data() + (b * g.F + f) * g.OH * g.OW;
            for (std::size_t c = 0; c < g.C; ++c) {
              const std::size_t in_base = (b * g.C + c) * g.H * g.W;
              const std::size_t k_base = (f * g.C + c) * g.KH * g.KW;
              for (std::size_t u = 0; u < g.KH; ++u) {
                const auto [i0, i1] = valid_range(static_cast<std::ptrdiff_t>(u) - p, s, g.H, g.OH);
                for (std::size_t v = 0; v < g.KW; ++v) {
                  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(v) - p;
                  const auto [j0, j1] = valid_range(off, s, g.W, g.OW);
                  const double w = kern[k_base + u * g.KW + v];
                  double kacc = 0.0;
                  for (std::ptrdiff_t i = i0; i < i1; ++i) {
                    const std::size_t row =
                        in_base + static_cast<std::size_t>(i * s + static_cast<std::ptrdiff_t>(u) - p) * g.W;
                    const double* grow = go + i * static_cast<std::ptrdiff_t>(g.OW);
                    if (gx) {
                      double* xrow = gx->data().data() + row;
                      for (std::ptrdiff_t j = j0; j < j1; ++j) xrow[j * s + off] += grow[j] * w;
                    }
                    if (gk) {
                      const double* xin = x.data().data() + row;
                      for (std::ptrdiff_t j = j0; j < j1; ++j) kacc += grow[j] * xin[j * s + off];
                    }
                  }
                  if (gk) (*gk)[k_base + u * g.KW + v] += kacc;
                }
              }
            }
          }
        }
      });
}

namespace {

void gemm_acc(const double* a, const double* b, double* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = a[i * K + k];
      for (std::size_t j = 0; j < N; ++j) c[i * N + j] += aik * b[k * N + j];
    }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  Tensor out({M, N});
  gemm_acc(av.data().data(), bv.data().data(), out.data().data(), M, K, N);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::MatMul, {a, b}, std::move(out),
                     [ia, ib, M, K, N](const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
                       const Tensor& x = t.value(ia);
                       const Tensor& y = t.value(ib);
                       if (pg[0])  // dA = G * B^T
                         for (std::size_t i = 0; i < M; ++i)
                           for (std::size_t k = 0; k < K; ++k) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < N; ++j) acc += g[i * N + j] * y[k * N + j];
                             (*pg[0])[i * K + k] += acc;
                           }
                       if (pg[1])  // dB = A^T * G
                         for (std::size_t i = 0; i < M; ++i)
                           for (std::size_t k = 0; k < K; ++k) {
                             const double aik = x[i * K + k];
                             for (std::size_t j = 0; j < N; ++j) (*pg[1])[k * N + j] += aik * g[i * N + j];
                           }
                     });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
    throw DimensionError("add_bias: incompatible shapes " + shape_str(xv.shape()) + " and " + shape_str(bv.shape()));
  const std::size_t B = xv.dim(0), N = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < N; ++j) out[r * N + j] += bv[j];
  return tape.record(OpKind::AddBias, {x, bias}, std::move(out),
                     [B, N](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                       if (pg[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                       if (pg[1])
                         for (std::size_t r = 0; r < B; ++r)
                           for (std::size_t j = 0; j < N; ++j) (*pg[1])[j] += g[r * N + j];
                     });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record(OpKind::Sum, {x}, Tensor::scalar(acc),
                         [](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           for (auto& v : pg[0]->values()) v += g[0];
                         });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return x.tape().record(OpKind::Mean, {x}, Tensor::scalar(acc / n),
                         [n](const Tape&, const Tensor& g, std::span<Tensor* const> pg) {
                           if (!pg[0]) return;
                           const double d = g[0] / n;
                           for (auto& v : pg[0]->values()) v += d;
                         });
}

}  // namespace gtb
