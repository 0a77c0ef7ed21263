#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "lbt/ad/tensor.hpp"

namespace lbt::ad {

/// Primitive kinds. Every primitive has defined first and second derivatives
/// on the interior of its domain; the backward rule of each one is written in
/// terms of other primitives, so gradients are ordinary graph nodes.
enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kMatMul,
  kSum,
  kMean,
  kBroadcast,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSquare,
  kSqrt,
  kLogSumExp,
  kConcat,
  kSlice,
  kReshape,
};

std::string_view op_name(OpKind kind);

class Var;

/// Per-primitive attributes.
struct OpAttr {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  bool transpose_lhs = false;
  bool transpose_rhs = false;
};

struct Node {
  OpKind kind = OpKind::kLeaf;
  std::vector<Var> inputs;
  Tensor value;
  bool requires_grad = false;
  OpAttr attr;
};

/// Handle to an immutable graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  OpKind kind() const { return node_->kind; }
  const Node& node() const { return *node_; }
  const Node* id() const noexcept { return node_.get(); }

  /// Same value, cut from the graph.
  Var detach() const;

 private:
  std::shared_ptr<const Node> node_;
};

/// Leaf that does not take part in differentiation.
Var constant(Tensor value);
Var constant(double value);
/// Leaf that gradients can be taken with respect to.
Var parameter(Tensor value);

/// While alive on the current thread, newly created nodes record no operands
/// and never require gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

// Elementwise binary primitives. Operands must have equal shapes or be
// broadcast-compatible (trailing-aligned, extents equal or 1); compatible
// operands are expanded with explicit broadcast nodes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& a);
Var exp(const Var& a);
/// Throws DomainError if any operand value is non-positive.
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
/// Throws DomainError if any operand value is negative.
Var sqrt(const Var& a);

/// op(a) * op(b) for rank-2 operands, op = optional transpose.
Var matmul(const Var& a, const Var& b, bool transpose_a = false,
           bool transpose_b = false);

/// Sum of all elements (rank-0 result).
Var sum(const Var& a);
/// Reduction adjoint to broadcast: sums `a` down to `target`, which must be
/// broadcastable to a's shape.
Var sum_to(const Var& a, const Shape& target);
/// Mean of all elements (rank-0 result).
Var mean(const Var& a);
Var broadcast(const Var& a, const Shape& target);

/// Log-sum-exp over the last axis: [n] -> [], [r, c] -> [r, 1].
Var logsumexp(const Var& a);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(const Var& a, const Shape& shape);

// Convenience compositions (not primitives).
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
/// log(1 + exp(a)) computed as logsumexp over {0, a}; a must be [n, 1].
Var softplus(const Var& a);
/// Sum of a[i] * w[i] for a of shape [n] or [n, 1] and constant weights.
Var weighted_sum(const Var& a, const Tensor& weights);
/// Dot product of two equally shaped nodes.
Var dot(const Var& a, const Var& b);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);

/// Shape of the broadcast of a and b; throws ShapeError naming `op`.
Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op);

struct GradOptions {
  /// Build the gradient as a differentiable graph. When false the returned
  /// nodes are constants and no backward graph is retained.
  bool create_graph = true;
};

/// Reverse-mode gradient of a scalar `output` with respect to each node in
/// `wrt`. Nodes with no path to `output` receive zeros of matching shape.
std::vector<Var> gradient(const Var& output, std::span<const Var> wrt,
                          GradOptions options = {});
Var gradient(const Var& output, const Var& wrt, GradOptions options = {});

}  // namespace lbt::ad
