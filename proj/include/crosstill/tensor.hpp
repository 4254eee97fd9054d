#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap shared handle onto a graph node. Every primitive in
// ops.hpp allocates a fresh node whose backward closure captures its inputs,
// so the graph lives exactly as long as the loss handle that roots it.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crosstill/error.hpp"

namespace crosstill {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, zero-filled
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const T>)> backward;  // receives this node's grad

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
bool all_finite(std::span<const T> xs) {
  for (T x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = crosstill::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    CROSSTILL_EXPECT(crosstill::numel(shape) == values.size(),
                     "tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from(Shape{1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  const std::string& op() const { return node_->op; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  /// Gradient buffer; zeros if nothing has been accumulated yet. The handle is
  /// shallow-const: a const Tensor still exposes its node's gradient storage.
  std::span<T> grad() const { return node_->grad_buffer(); }

  T item() const {
    CROSSTILL_EXPECT(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  /// Copy of the values without graph history.
  Tensor detach() const { return from(shape(), node_->data, false); }

  /// Independent deep copy keeping the requires_grad flag.
  Tensor clone() const { return from(shape(), node_->data, node_->requires_grad); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

/// Thread-local switch for graph recording; see NoGradGuard.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording in the current scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Build the result node of a primitive. The backward closure is attached only
/// when at least one input participates in differentiation.
template <class T, class Backward>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
  if (!detail::all_finite<T>(values))
    throw NumericError(std::string(op), "non-finite value produced by " + std::string(op));
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = std::string(op);
  if (grad_mode_enabled()) {
    for (const auto& in : inputs)
      if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs)
      if (in.requires_grad()) node->parents.push_back(in.node());
    node->backward = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable node with requires_grad; interior buffers are released afterwards.
template <class T>
void backward(const Tensor<T>& loss) {
  CROSSTILL_EXPECT(loss.defined() && loss.numel() == 1,
                   "backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  using NodePtr = typename Tensor<T>::NodePtr;
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (!node->backward) continue;
    node->backward(std::span<const T>(node->grad_buffer()));
    for (const NodePtr& parent : node->parents) {
      if (!detail::all_finite<T>(parent->grad))
        throw NumericError(node->op, "non-finite gradient produced by backward of " + node->op);
    }
    // Interior gradients are no longer needed once propagated.
    std::vector<T>().swap(node->grad);
  }
}

}  // namespace crosstill
