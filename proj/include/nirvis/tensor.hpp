#pragma once

// Reverse-mode automatic differentiation over 4-D NHWC tensors.
//
// A Tensor is a handle to a graph node. Operations create new nodes that keep
// their inputs alive and carry a closure that pushes the node's gradient back
// into its parents. Nodes only record parents when at least one input
// requires a gradient, so inference graphs are freed as soon as they go out
// of scope.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nirvis/error.hpp"

namespace nirvis {

struct Shape {
  int n = 1;
  int h = 1;
  int w = 1;
  int c = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
           static_cast<std::size_t>(c);
  }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," + std::to_string(c) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

namespace detail {

inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

}  // namespace detail

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) { return full(s, T(0), requires_grad); }

  static Tensor full(Shape s, T v, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->shape = s;
    node->value.assign(s.size(), v);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != s.size())
      throw ValidationError("tensor data size " + std::to_string(data.size()) + " does not match shape " + s.str());
    auto node = std::make_shared<Node<T>>();
    node->shape = s;
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return full(Shape{}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<T> value() { return node_->value; }
  std::span<const T> value() const { return node_->value; }
  std::vector<T>& storage() { return node_->value; }
  const std::vector<T>& storage() const { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (size() != 1) throw ValidationError("item() on non-scalar tensor " + shape().str());
    return node_->value[0];
  }

  T at(int n, int y, int x, int c) const { return node_->value[offset(n, y, x, c)]; }
  T& at(int n, int y, int x, int c) { return node_->value[offset(n, y, x, c)]; }

  /// Same values, no history.
  Tensor detach() const { return from_data(shape(), node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  std::size_t offset(int n, int y, int x, int c) const {
    const Shape& s = node_->shape;
    return ((static_cast<std::size_t>(n) * s.h + y) * s.w + x) * s.c + c;
  }

  NodePtr node_;
};

/// Creates the result node of an operation. `backward` receives the result
/// node; it runs only when some parent requires a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  if (!detail::grad_disabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor<T>& p) { return p.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// node that requires one; each node's closure runs exactly once.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw ValidationError("backward: loss must be a scalar, got shape " + loss.shape().str());
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node<T>* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace nirvis
