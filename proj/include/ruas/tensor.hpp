#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ruas/error.hpp"

namespace ruas {

/// Dense NCHW extent.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] constexpr std::size_t numel() const { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t plane() const { return h * w; }
  [[nodiscard]] constexpr std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

namespace detail {

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's adjoint into its parents. Empty for leaves.
  std::function<void(const Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
  [[nodiscard]] bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

/// Handle to a node of the differentiation graph.
///
/// Copies share the underlying node, the same way a framework tensor does;
/// use clone() for an independent buffer. Every operation that takes a
/// tensor requiring gradients records its adjoint rule on the result, and
/// backward() replays the recorded graph in reverse topological order.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() : Tensor(Shape{}, std::vector<T>(1, T(0))) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (data.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_->shape = shape;
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape.numel(), T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape.numel(), v), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
  }
  /// 1-D vector stored along the width axis.
  static Tensor vector(std::vector<T> v, bool requires_grad = false) {
    Shape s{1, 1, 1, v.size()};
    return Tensor(s, std::move(v), requires_grad);
  }

  /// Result of a primitive. `backward` receives the result node and must
  /// accumulate into the parents' grad buffers.
  static Tensor make_result(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                            std::function<void(const detail::Node<T>&)> backward) {
    Tensor out(shape, std::move(value));
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(backward);
    }
    return out;
  }

  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t numel() const { return node_->value.size(); }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] bool is_leaf() const { return node_->is_leaf(); }

  [[nodiscard]] std::span<const T> data() const { return node_->value; }
  /// Mutable access to the values. Only meaningful on leaves; editing an
  /// intermediate result does not re-run the graph.
  [[nodiscard]] std::span<T> mutable_data() { return node_->value; }
  [[nodiscard]] const std::vector<T>& values() const { return node_->value; }

  [[nodiscard]] bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  [[nodiscard]] std::span<const T> grad() const { return node_->grad; }
  [[nodiscard]] std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  [[nodiscard]] T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const auto& s = shape();
    return node_->value[((n * s.c + c) * s.h + y) * s.w + x];
  }

  /// Independent leaf holding a copy of the values.
  [[nodiscard]] Tensor detach() const { return Tensor(shape(), node_->value, false); }
  [[nodiscard]] Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  [[nodiscard]] const NodePtr& node() const { return node_; }

  /// True when both handles refer to the same graph node.
  [[nodiscard]] bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  NodePtr node_;
};

/// A named trainable leaf.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <std::floating_point T>
using ParamSet = std::vector<Parameter<T>>;

template <std::floating_point T>
std::size_t param_count(const ParamSet<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <std::floating_point T>
void zero_grads(ParamSet<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template <std::floating_point T>
void append(ParamSet<T>& dst, const ParamSet<T>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

/// Flat copy of all parameter values, in set order.
template <std::floating_point T>
std::vector<T> flatten_values(const ParamSet<T>& params) {
  std::vector<T> out;
  out.reserve(param_count(params));
  for (const auto& p : params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

/// Flat copy of all gradients; absent gradients contribute zeros.
template <std::floating_point T>
std::vector<T> flatten_grads(const ParamSet<T>& params) {
  std::vector<T> out;
  out.reserve(param_count(params));
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      out.insert(out.end(), p.tensor.numel(), T(0));
    }
  }
  return out;
}

template <std::floating_point T>
void assign_values(ParamSet<T>& params, std::span<const T> flat) {
  if (flat.size() != param_count(params)) throw ShapeError("flat parameter vector has wrong length");
  std::size_t off = 0;
  for (auto& p : params) {
    auto d = p.tensor.mutable_data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), d.size(), d.begin());
    off += d.size();
  }
}

/// Reverse-mode sweep from a scalar loss.
///
/// Intermediate adjoints are recomputed on every call while leaf adjoints
/// accumulate, so calling twice without zero_grad doubles leaf gradients.
template <std::floating_point T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order with each node once.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
  for (NodeT* n : order) {
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
      continue;
    }
    for (T g : n->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient reached a leaf tensor");
    }
  }
}

}  // namespace ruas
