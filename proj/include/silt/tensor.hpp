#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "silt/error.hpp"

namespace silt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

/// Accumulator type used inside reductions.
template <class T>
using accum_t = std::conditional_t<(sizeof(T) < sizeof(double)), double, T>;

namespace detail {

inline thread_local bool grad_disabled = false;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something writes a gradient
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad.data();
  }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }
  ~NoGradGuard() { detail::grad_disabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle. Copies share the underlying node; values
/// produced by ops are immutable, only leaves expose mutable storage.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (silt::numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       to_string(shape));
    }
    for (const T& x : data) {
      if (!std::isfinite(x)) throw NumericError("non-finite value in tensor of shape " + to_string(shape));
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = silt::numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = silt::numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) { return BasicTensor({1}, {value}, requires_grad); }

  /// Builds an op output. When no parent requires grad (or recording is
  /// disabled) the result is a constant with no graph attached.
  static BasicTensor from_op(Shape shape, std::vector<T> data, std::vector<NodePtr> parents,
                             std::function<void(detail::Node<T>&)> backward, const char* op) {
    BasicTensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = std::move(shape);
    out.node_->data = std::move(data);
    out.node_->op = op;
    bool needs = false;
    if (!detail::grad_disabled) {
      for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents = std::move(parents);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }

  /// Dimension with python-style negative indexing.
  std::size_t dim(long i) const {
    const long r = static_cast<long>(rank());
    const long k = i < 0 ? r + i : i;
    if (k < 0 || k >= r) throw ShapeError("dimension " + std::to_string(i) + " out of range for " + to_string(shape()));
    return node().shape[static_cast<std::size_t>(k)];
  }

  std::span<const T> data() const { return node().data; }
  const T& operator[](std::size_t i) const { return node().data[i]; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node().data[0];
  }

  /// Writable storage; only valid for graph leaves (parameters, inputs).
  std::span<T> mutable_data() {
    if (!node().parents.empty() || node().backward) {
      throw ContractError(std::string("mutable_data() on non-leaf tensor produced by ") + node().op);
    }
    return node_->data;
  }

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return std::span<T>(node_->grad_buffer(), numel()); }
  void zero_grad() { node_->grad.clear(); }
  const char* op() const { return node().op; }

  /// Deep copy as a fresh leaf (no graph, no grad).
  BasicTensor clone(bool requires_grad) const { return BasicTensor(shape(), node().data, requires_grad); }
  BasicTensor detach() const { return clone(false); }

  template <class U>
  BasicTensor<U> cast(bool requires_grad) const {
    std::vector<U> out(node().data.begin(), node().data.end());
    return BasicTensor<U>(shape(), std::move(out), requires_grad);
  }

  const NodePtr& node_ptr() const { return node_; }

 private:
  const detail::Node<T>& node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return *node_;
  }

  NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <class T>
void check_finite(const BasicTensor<T>& t, const std::string& where) {
  for (const T& x : t.data()) {
    if (!std::isfinite(x)) throw NumericError("non-finite value detected in " + where);
  }
}

/// Reverse-mode sweep from a scalar. Gradients are never accumulated
/// silently across calls: a node that already holds a gradient is an error,
/// so callers must zero_grad() parameters between steps.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a loss that depends on no trainable tensor");

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node_ptr().get(), 0}};
  seen.insert(loss.node_ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) {
    if (!n->grad.empty()) {
      throw ContractError(std::string("gradient already populated on a '") + n->op +
                          "' node; call zero_grad() before another backward()");
    }
  }
  loss.node_ptr()->grad.assign(1, T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace silt
