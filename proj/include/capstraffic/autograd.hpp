#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "capstraffic/tensor.hpp"

namespace capstraffic {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient slots of a node's operands during the backward sweep. A slot is
// zero-initialised with the operand's shape on first access.
class GradSlots {
 public:
  bool wants(std::size_t operand) const;
  Tensor& operator[](std::size_t operand);

 private:
  friend class Tape;
  GradSlots(const Tape& tape, std::span<const std::size_t> operands,
            std::vector<std::optional<Tensor>>& grads)
      : tape_(tape), operands_(operands), grads_(grads) {}

  const Tape& tape_;
  std::span<const std::size_t> operands_;
  std::vector<std::optional<Tensor>>& grads_;
};

// Accumulates d(output)/d(operand) contributions given d(loss)/d(output).
using BackwardFn = std::function<void(const Tensor& grad_out, GradSlots& grads)>;

// Result of a backward sweep: one gradient per tracked leaf variable.
class Gradients {
 public:
  // Gradient of the loss w.r.t. a tracked variable; zeros when the loss does
  // not depend on it.
  Tensor operator[](Var v) const;
  // Pointer to the stored gradient, or nullptr when none was produced.
  const Tensor* find(Var v) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so operands
// always precede their consumers.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tracked leaf: gradients are reported for it.
  Var variable(Tensor value);
  // Untracked leaf.
  Var constant(Tensor value);
  // Interior node computed from `operands`. `backward` may be empty when no
  // operand requires a gradient.
  Var record(Tensor value, std::vector<Var> operands, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Backpropagates from a one-element loss. Does not mutate the tape, so
  // repeated calls return identical gradients.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> operands;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  void check_owner(Var v) const;

  std::deque<Node> nodes_;  // stable addresses: values stay valid as the tape grows
};

enum class ElementwiseOp { add, sub, mul, div, neg, relu, square, sqrt, exp };

// Pointwise op. Binary kinds require equal shapes, except that a one-element
// operand broadcasts against the other.
Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt);

inline Var add(Var a, Var b) { return elementwise(ElementwiseOp::add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(ElementwiseOp::mul, a, b); }
inline Var div(Var a, Var b) { return elementwise(ElementwiseOp::div, a, b); }
inline Var neg(Var a) { return elementwise(ElementwiseOp::neg, a); }
inline Var relu(Var a) { return elementwise(ElementwiseOp::relu, a); }
inline Var square(Var a) { return elementwise(ElementwiseOp::square, a); }
inline Var sqrt(Var a) { return elementwise(ElementwiseOp::sqrt, a); }
inline Var exp(Var a) { return elementwise(ElementwiseOp::exp, a); }

Var scale(Var a, double factor);
Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);

}  // namespace capstraffic
