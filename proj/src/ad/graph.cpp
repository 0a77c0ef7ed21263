#include "lbt/ad/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <unordered_set>
#include <string>
#include <unordered_map>
#include <utility>

#include "lbt/error.hpp"

namespace lbt::ad {
namespace {

thread_local bool g_grad_mode = true;

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims dims_of(const Shape& s) {
  switch (s.size()) {
    case 0: return {1, 1};
    case 1: return {1, s[0]};
    default: return {s[0], s[1]};
  }
}

bool broadcastable(const Shape& from, const Shape& to) {
  if (from.size() > to.size()) return false;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const std::size_t f = from[from.size() - 1 - i];
    const std::size_t t = to[to.size() - 1 - i];
    if (f != t && f != 1) return false;
  }
  return true;
}

[[noreturn]] void shape_fail(std::string_view op, const Shape& a,
                             const Shape& b, std::string_view why = {}) {
  std::string msg = std::string(op) + ": incompatible shapes " +
                    shape_string(a) + " and " + shape_string(b);
  if (!why.empty()) msg += " (" + std::string(why) + ")";
  throw ShapeError(msg);
}

Var make_node(OpKind kind, std::vector<Var> inputs, Tensor value,
              OpAttr attr = {}) {
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->value = std::move(value);
  node->attr = attr;
  bool rg = false;
  if (g_grad_mode) {
    for (const auto& in : inputs) rg = rg || in.requires_grad();
  }
  node->requires_grad = rg;
  if (rg) node->inputs = std::move(inputs);
  return Var(std::move(node));
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

Tensor broadcast_value(const Tensor& a, const Shape& target) {
  const Dims in = dims_of(a.shape());
  const Dims out = dims_of(target);
  Tensor result(target);
  auto src = a.data();
  auto dst = result.data();
  for (std::size_t r = 0; r < out.rows; ++r) {
    const std::size_t ir = in.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < out.cols; ++c) {
      const std::size_t ic = in.cols == 1 ? 0 : c;
      dst[r * out.cols + c] = src[ir * in.cols + ic];
    }
  }
  return result;
}

Tensor sum_to_value(const Tensor& a, const Shape& target) {
  const Dims in = dims_of(a.shape());
  const Dims out = dims_of(target);
  Tensor result(target, 0.0);
  auto src = a.data();
  auto dst = result.data();
  for (std::size_t r = 0; r < in.rows; ++r) {
    const std::size_t orow = out.rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < in.cols; ++c) {
      const std::size_t ocol = out.cols == 1 ? 0 : c;
      dst[orow * out.cols + ocol] += src[r * in.cols + c];
    }
  }
  return result;
}

// Expands both operands of an elementwise primitive to their common shape.
std::pair<Var, Var> align(const Var& a, const Var& b, std::string_view op) {
  if (a.shape() == b.shape()) return {a, b};
  const Shape target = broadcast_shape(a.shape(), b.shape(), op);
  Var x = a.shape() == target ? a : broadcast(a, target);
  Var y = b.shape() == target ? b : broadcast(b, target);
  return {x, y};
}

Var zeros_like_shape(const Shape& s) { return constant(Tensor(s, 0.0)); }

// Gradient contributions of `out` to each of its inputs, given the upstream
// gradient `g`. Entries for inputs that do not require gradients stay
// undefined.
std::vector<Var> backward_rule(const Var& out, const Var& g) {
  const Node& n = out.node();
  const auto& in = n.inputs;
  std::vector<Var> grads(in.size());
  auto need = [&](std::size_t i) { return in[i].requires_grad(); };

  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      if (need(0)) grads[0] = g;
      if (need(1)) grads[1] = g;
      break;
    case OpKind::kSub:
      if (need(0)) grads[0] = g;
      if (need(1)) grads[1] = neg(g);
      break;
    case OpKind::kMul:
      if (need(0)) grads[0] = mul(g, in[1]);
      if (need(1)) grads[1] = mul(g, in[0]);
      break;
    case OpKind::kDiv:
      if (need(0)) grads[0] = div(g, in[1]);
      if (need(1)) grads[1] = neg(div(mul(g, out), in[1]));
      break;
    case OpKind::kNeg:
      grads[0] = neg(g);
      break;
    case OpKind::kMatMul: {
      const bool ta = n.attr.transpose_lhs;
      const bool tb = n.attr.transpose_rhs;
      const Var& a = in[0];
      const Var& b = in[1];
      if (need(0)) {
        grads[0] = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
      }
      if (need(1)) {
        grads[1] = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
      }
      break;
    }
    case OpKind::kSum:
      grads[0] = broadcast(g, in[0].shape());
      break;
    case OpKind::kMean: {
      const double count = static_cast<double>(in[0].size());
      grads[0] = broadcast(div(g, constant(count)), in[0].shape());
      break;
    }
    case OpKind::kBroadcast:
      grads[0] = sum_to(g, in[0].shape());
      break;
    case OpKind::kExp:
      grads[0] = mul(g, out);
      break;
    case OpKind::kLog:
      grads[0] = div(g, in[0]);
      break;
    case OpKind::kTanh:
      grads[0] = sub(g, mul(g, square(out)));
      break;
    case OpKind::kSigmoid:
      grads[0] = mul(g, sub(out, square(out)));
      break;
    case OpKind::kSquare: {
      Var gx = mul(g, in[0]);
      grads[0] = add(gx, gx);
      break;
    }
    case OpKind::kSqrt:
      grads[0] = div(g, add(out, out));
      break;
    case OpKind::kLogSumExp: {
      const Shape& xs = in[0].shape();
      Var softmax = exp(sub(in[0], broadcast(out, xs)));
      grads[0] = mul(broadcast(g, xs), softmax);
      break;
    }
    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t len = in[i].shape()[n.attr.axis];
        if (need(i)) grads[i] = slice(g, n.attr.axis, offset, len);
        offset += len;
      }
      break;
    }
    case OpKind::kSlice: {
      const Shape& xs = in[0].shape();
      const std::size_t axis = n.attr.axis;
      const std::size_t before = n.attr.start;
      const std::size_t after = xs[axis] - n.attr.start - n.attr.length;
      std::vector<Var> parts;
      if (before) {
        Shape s = xs;
        s[axis] = before;
        parts.push_back(zeros_like_shape(s));
      }
      parts.push_back(g);
      if (after) {
        Shape s = xs;
        s[axis] = after;
        parts.push_back(zeros_like_shape(s));
      }
      grads[0] = parts.size() == 1 ? g : concat(parts, axis);
      break;
    }
    case OpKind::kReshape:
      grads[0] = reshape(g, in[0].shape());
      break;
  }
  return grads;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kNeg: return "neg";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSquare: return "square";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kLogSumExp: return "logsumexp";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

Var Var::detach() const { return constant(value()); }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant(double value) { return constant(Tensor::scalar(value)); }

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_mode; }

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[rank - 1 - i] = da == 1 ? db : da;
  }
  return out;
}

Var add(const Var& a, const Var& b) {
  auto [x, y] = align(a, b, "add");
  return make_node(OpKind::kAdd, {x, y},
                   map_binary(x.value(), y.value(),
                              [](double p, double q) { return p + q; }));
}

Var sub(const Var& a, const Var& b) {
  auto [x, y] = align(a, b, "sub");
  return make_node(OpKind::kSub, {x, y},
                   map_binary(x.value(), y.value(),
                              [](double p, double q) { return p - q; }));
}

Var mul(const Var& a, const Var& b) {
  auto [x, y] = align(a, b, "mul");
  return make_node(OpKind::kMul, {x, y},
                   map_binary(x.value(), y.value(),
                              [](double p, double q) { return p * q; }));
}

Var div(const Var& a, const Var& b) {
  auto [x, y] = align(a, b, "div");
  const auto den = y.value().data();
  for (std::size_t i = 0; i < den.size(); ++i) {
    if (den[i] == 0.0) {
      throw DomainError("div: zero denominator at index " + std::to_string(i));
    }
  }
  return make_node(OpKind::kDiv, {x, y},
                   map_binary(x.value(), y.value(),
                              [](double p, double q) { return p / q; }));
}

Var neg(const Var& a) {
  return make_node(OpKind::kNeg, {a},
                   map_unary(a.value(), [](double v) { return -v; }));
}

Var exp(const Var& a) {
  return make_node(OpKind::kExp, {a},
                   map_unary(a.value(), [](double v) { return std::exp(v); }));
}

Var log(const Var& a) {
  const auto src = a.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] > 0.0)) {
      throw DomainError("log: non-positive operand " + std::to_string(src[i]) +
                        " at index " + std::to_string(i));
    }
  }
  return make_node(OpKind::kLog, {a},
                   map_unary(a.value(), [](double v) { return std::log(v); }));
}

Var tanh(const Var& a) {
  return make_node(OpKind::kTanh, {a},
                   map_unary(a.value(), [](double v) { return std::tanh(v); }));
}

Var sigmoid(const Var& a) {
  return make_node(OpKind::kSigmoid, {a}, map_unary(a.value(), [](double v) {
                     if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
                     const double e = std::exp(v);
                     return e / (1.0 + e);
                   }));
}

Var square(const Var& a) {
  return make_node(OpKind::kSquare, {a},
                   map_unary(a.value(), [](double v) { return v * v; }));
}

Var sqrt(const Var& a) {
  const auto src = a.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] < 0.0) {
      throw DomainError("sqrt: negative operand at index " + std::to_string(i));
    }
  }
  return make_node(OpKind::kSqrt, {a},
                   map_unary(a.value(), [](double v) { return std::sqrt(v); }));
}

Var matmul(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2) {
    shape_fail("matmul", as, bs, "operands must be rank 2");
  }
  const std::size_t m = transpose_a ? as[1] : as[0];
  const std::size_t ka = transpose_a ? as[0] : as[1];
  const std::size_t kb = transpose_b ? bs[1] : bs[0];
  const std::size_t n = transpose_b ? bs[0] : bs[1];
  if (ka != kb) shape_fail("matmul", as, bs, "inner extents differ");

  Tensor out(Shape{m, n}, 0.0);
  if (m && n && ka) {
    Eigen::Map<const RowMajor> A(a.value().data().data(), as[0], as[1]);
    Eigen::Map<const RowMajor> B(b.value().data().data(), bs[0], bs[1]);
    Eigen::Map<RowMajor> C(out.data().data(), m, n);
    if (!transpose_a && !transpose_b) {
      C.noalias() = A * B;
    } else if (transpose_a && !transpose_b) {
      C.noalias() = A.transpose() * B;
    } else if (!transpose_a && transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A.transpose() * B.transpose();
    }
  }
  OpAttr attr;
  attr.transpose_lhs = transpose_a;
  attr.transpose_rhs = transpose_b;
  return make_node(OpKind::kMatMul, {a, b}, std::move(out), attr);
}

Var sum(const Var& a) { return sum_to(a, Shape{}); }

Var sum_to(const Var& a, const Shape& target) {
  if (!broadcastable(target, a.shape())) shape_fail("sum", a.shape(), target);
  if (target == a.shape()) return a;
  return make_node(OpKind::kSum, {a}, sum_to_value(a.value(), target));
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  if (a.size() == 0) throw ShapeError("mean: empty operand");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_node(OpKind::kMean, {a}, Tensor::scalar(total / n));
}

Var broadcast(const Var& a, const Shape& target) {
  if (!broadcastable(a.shape(), target)) {
    shape_fail("broadcast", a.shape(), target);
  }
  if (target == a.shape()) return a;
  return make_node(OpKind::kBroadcast, {a}, broadcast_value(a.value(), target));
}

Var logsumexp(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("logsumexp: operand must have rank >= 1");
  const Dims d = dims_of(s);
  if (d.cols == 0) throw ShapeError("logsumexp: empty reduction axis");
  Tensor out(s.size() == 1 ? Shape{} : Shape{d.rows, 1});
  const auto src = a.value().data();
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double* row = src.data() + r * d.cols;
    const double m = *std::max_element(row, row + d.cols);
    if (std::isinf(m)) {
      out[r] = m;
      continue;
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < d.cols; ++c) acc += std::exp(row[c] - m);
    out[r] = m + std::log(acc);
  }
  return make_node(OpKind::kLogSumExp, {a}, std::move(out));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  auto dst = out.data();
  const Dims od = dims_of(out_shape);
  if (first.size() == 1 || axis == 0) {
    std::size_t pos = 0;
    for (const auto& p : parts) {
      auto src = p.value().data();
      std::copy(src.begin(), src.end(), dst.begin() + pos);
      pos += src.size();
    }
  } else {
    std::size_t col0 = 0;
    for (const auto& p : parts) {
      const Dims pd = dims_of(p.shape());
      auto src = p.value().data();
      for (std::size_t r = 0; r < pd.rows; ++r) {
        std::copy(src.begin() + r * pd.cols, src.begin() + (r + 1) * pd.cols,
                  dst.begin() + r * od.cols + col0);
      }
      col0 += pd.cols;
    }
  }
  OpAttr attr;
  attr.axis = axis;
  return make_node(OpKind::kConcat, {parts.begin(), parts.end()},
                   std::move(out), attr);
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(const Var& a, std::size_t axis, std::size_t start,
          std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " outside shape " +
                     shape_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  auto src = a.value().data();
  auto dst = out.data();
  if (s.size() == 1 || axis == 0) {
    const std::size_t stride = s.size() == 1 ? 1 : s[1];
    std::copy(src.begin() + start * stride,
              src.begin() + (start + length) * stride, dst.begin());
  } else {
    for (std::size_t r = 0; r < s[0]; ++r) {
      std::copy(src.begin() + r * s[1] + start,
                src.begin() + r * s[1] + start + length,
                dst.begin() + r * length);
    }
  }
  OpAttr attr;
  attr.axis = axis;
  attr.start = start;
  attr.length = length;
  return make_node(OpKind::kSlice, {a}, std::move(out), attr);
}

Var reshape(const Var& a, const Shape& shape) {
  if (shape == a.shape()) return a;
  return make_node(OpKind::kReshape, {a}, a.value().reshaped(shape));
}

Var scale(const Var& a, double factor) { return mul(a, constant(factor)); }

Var add_scalar(const Var& a, double value) { return add(a, constant(value)); }

Var softplus(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() != 2 || s[1] != 1) {
    throw ShapeError("softplus: expected [n, 1], got " + shape_string(s));
  }
  return logsumexp(concat({constant(Tensor(s, 0.0)), a}, 1));
}

Var weighted_sum(const Var& a, const Tensor& weights) {
  if (weights.size() != a.size()) {
    shape_fail("weighted_sum", a.shape(), weights.shape());
  }
  return sum(mul(a, constant(weights.reshaped(a.shape()))));
}

Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return neg(a); }

std::vector<Var> gradient(const Var& output, std::span<const Var> wrt,
                          GradOptions options) {
  if (output.size() != 1) {
    throw ContractError("gradient: output must be scalar, got shape " +
                        shape_string(output.shape()));
  }
  for (const auto& w : wrt) {
    if (!w.requires_grad()) {
      throw ContractError("gradient: wrt node of shape " +
                          shape_string(w.shape()) +
                          " does not require gradients");
    }
  }

  // Post-order DFS over the part of the graph that requires gradients.
  std::vector<Var> order;
  if (output.requires_grad()) {
    std::unordered_map<const Node*, bool> visited;
    std::vector<std::pair<Var, std::size_t>> stack;
    stack.emplace_back(output, 0);
    visited[output.id()] = true;
    while (!stack.empty()) {
      auto& [v, next] = stack.back();
      const auto& inputs = v.node().inputs;
      if (next < inputs.size()) {
        const Var child = inputs[next++];
        if (child.requires_grad() && !visited[child.id()]) {
          visited[child.id()] = true;
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(v);
        stack.pop_back();
      }
    }
  }

  std::optional<NoGradGuard> guard;
  if (!options.create_graph) guard.emplace();

  std::unordered_set<const Node*> keep;
  for (const auto& w : wrt) keep.insert(w.id());

  std::unordered_map<const Node*, Var> grads;
  if (!order.empty()) {
    grads[output.id()] = constant(Tensor(output.shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& v = *it;
    auto found = grads.find(v.id());
    if (found == grads.end() || v.kind() == OpKind::kLeaf) continue;
    const Var g = found->second;
    std::vector<Var> contrib = backward_rule(v, g);
    const auto& inputs = v.node().inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!contrib[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(inputs[i].id(), contrib[i]);
      if (!inserted) slot->second = add(slot->second, contrib[i]);
    }
    // The upstream gradient of an interior node is no longer needed.
    if (!keep.contains(v.id())) grads.erase(v.id());
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = grads.find(w.id());
    if (found == grads.end()) {
      result.push_back(zeros_like_shape(w.shape()));
    } else {
      result.push_back(options.create_graph ? found->second
                                            : found->second.detach());
    }
  }
  return result;
}

Var gradient(const Var& output, const Var& wrt, GradOptions options) {
  return gradient(output, std::span<const Var>(&wrt, 1), options).front();
}

}  // namespace lbt::ad
