#include "capstraffic/autograd.hpp"

#include <cmath>
#include <string>

#include "capstraffic/error.hpp"

namespace capstraffic {

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

bool GradSlots::wants(std::size_t operand) const {
  return tape_.requires_grad(operands_[operand]);
}

Tensor& GradSlots::operator[](std::size_t operand) {
  const std::size_t id = operands_[operand];
  auto& slot = grads_[id];
  if (!slot) slot.emplace(tape_.value(id).shape(), 0.0);
  return *slot;
}

Tensor Gradients::operator[](Var v) const {
  if (const Tensor* g = find(v)) return *g;
  return Tensor(v.shape(), 0.0);
}

const Tensor* Gradients::find(Var v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return &*grads_[v.id()];
  return nullptr;
}

void Tape::check_owner(Var v) const {
  if (v.tape() != this) throw Error("Var belongs to a different tape");
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> operands, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.operands.reserve(operands.size());
  for (const Var& v : operands) {
    check_owner(v);
    node.operands.push_back(v.id());
    node.requires_grad = node.requires_grad || requires_grad(v.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  check_owner(loss);
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a one-element loss, got shape " +
                     shape_str(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id()].emplace(loss.shape(), 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads[id] || node.leaf) continue;
    if (node.requires_grad && node.backward) {
      GradSlots slots(*this, node.operands, grads);
      node.backward(*grads[id], slots);
    }
    // Interior gradients are consumed exactly once.
    grads[id].reset();
  }
  for (std::size_t id = 0; id < grads.size(); ++id) {
    if (grads[id] && !nodes_[id].requires_grad) grads[id].reset();
  }
  Gradients out;
  out.grads_ = std::move(grads);
  return out;
}

namespace {

Tape& tape_of(Var a) {
  if (!a.tape()) throw Error("use of an unbound Var");
  return *a.tape();
}

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::add: return "add";
    case ElementwiseOp::sub: return "sub";
    case ElementwiseOp::mul: return "mul";
    case ElementwiseOp::div: return "div";
    case ElementwiseOp::neg: return "neg";
    case ElementwiseOp::relu: return "relu";
    case ElementwiseOp::square: return "square";
    case ElementwiseOp::sqrt: return "sqrt";
    case ElementwiseOp::exp: return "exp";
  }
  return "?";
}

bool is_binary(ElementwiseOp op) {
  return op == ElementwiseOp::add || op == ElementwiseOp::sub ||
         op == ElementwiseOp::mul || op == ElementwiseOp::div;
}

Var unary(ElementwiseOp op, Var a) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (op) {
      case ElementwiseOp::neg: y[i] = -v; break;
      case ElementwiseOp::relu: y[i] = v > 0.0 ? v : 0.0; break;
      case ElementwiseOp::square: y[i] = v * v; break;
      case ElementwiseOp::sqrt: y[i] = std::sqrt(v); break;
      case ElementwiseOp::exp: y[i] = std::exp(v); break;
      default: break;
    }
  }
  auto backward = [op, a](const Tensor& g, GradSlots& grads) {
    const Tensor& x = a.value();
    Tensor& gx = grads[0];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      switch (op) {
        case ElementwiseOp::neg: gx[i] -= g[i]; break;
        case ElementwiseOp::relu: gx[i] += v > 0.0 ? g[i] : 0.0; break;
        case ElementwiseOp::square: gx[i] += 2.0 * v * g[i]; break;
        case ElementwiseOp::sqrt: gx[i] += g[i] * 0.5 / std::sqrt(v); break;
        case ElementwiseOp::exp: gx[i] += g[i] * std::exp(v); break;
        default: break;
      }
    }
  };
  return tape_of(a).record(std::move(y), {a}, backward);
}

}  // namespace

Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b) {
  if (!is_binary(op)) {
    if (b) throw Error(std::string(op_name(op)) + " takes one operand");
    return unary(op, a);
  }
  if (!b) throw Error(std::string(op_name(op)) + " takes two operands");
  const Tensor& x = a.value();
  const Tensor& z = b->value();
  const bool same = x.shape() == z.shape();
  const bool a_scalar = !same && x.size() == 1;
  const bool b_scalar = !same && z.size() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(z.shape()));
  }
  const Shape& out_shape = a_scalar ? z.shape() : x.shape();
  Tensor y(out_shape);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double l = a_scalar ? x[0] : x[i];
    const double r = b_scalar ? z[0] : z[i];
    switch (op) {
      case ElementwiseOp::add: y[i] = l + r; break;
      case ElementwiseOp::sub: y[i] = l - r; break;
      case ElementwiseOp::mul: y[i] = l * r; break;
      case ElementwiseOp::div: y[i] = l / r; break;
      default: break;
    }
  }
  Var rhs = *b;
  auto backward = [op, a, rhs, a_scalar, b_scalar](const Tensor& g, GradSlots& grads) {
    const Tensor& x = a.value();
    const Tensor& z = rhs.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = a_scalar ? 0 : i;
      const std::size_t ib = b_scalar ? 0 : i;
      double da = 0.0, db = 0.0;
      switch (op) {
        case ElementwiseOp::add: da = g[i]; db = g[i]; break;
        case ElementwiseOp::sub: da = g[i]; db = -g[i]; break;
        case ElementwiseOp::mul: da = g[i] * z[ib]; db = g[i] * x[ia]; break;
        case ElementwiseOp::div:
          da = g[i] / z[ib];
          db = -g[i] * x[ia] / (z[ib] * z[ib]);
          break;
        default: break;
      }
      if (grads.wants(0)) grads[0][ia] += da;
      if (grads.wants(1)) grads[1][ib] += db;
    }
  };
  return tape_of(a).record(std::move(y), {a, rhs}, backward);
}

Var scale(Var a, double factor) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = factor * x[i];
  return tape_of(a).record(std::move(y), {a}, [factor](const Tensor& g, GradSlots& grads) {
    Tensor& gx = grads[0];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.rank() != 2 || z.rank() != 2 || x.dim(1) != z.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(z.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = z.dim(1);
  Tensor y({m, n});
  kernels::gemm(false, false, m, n, k, 1.0, x.raw(), k, z.raw(), n, 0.0, y.raw(), n);
  return tape_of(a).record(std::move(y), {a, b}, [a, b, m, k, n](const Tensor& g, GradSlots& grads) {
    // dA = G B^T, dB = A^T G
    if (grads.wants(0)) {
      kernels::gemm(false, true, m, k, n, 1.0, g.raw(), n, b.value().raw(), n, 1.0,
                    grads[0].raw(), k);
    }
    if (grads.wants(1)) {
      kernels::gemm(true, false, k, n, m, 1.0, a.value().raw(), k, g.raw(), n, 1.0,
                    grads[1].raw(), n);
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return tape_of(a).record(Tensor::scalar(total), {a}, [](const Tensor& g, GradSlots& grads) {
    Tensor& gx = grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return tape_of(a).record(a.value().reshaped(std::move(shape)), {a},
                           [](const Tensor& g, GradSlots& grads) {
                             Tensor& gx = grads[0];
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
}

}  // namespace capstraffic
