#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ibro/error.hpp"

namespace ibro::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads the output gradient and accumulates into the parents' grad buffers.
  std::function<void(const T*)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Dense row-major array with reverse-mode gradient support.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Use clone() for an independent leaf copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> values(shape_size(shape), T(0));
    return from_values(std::move(values), std::move(shape), requires_grad);
  }

  static Tensor from_values(std::vector<T> values, Shape shape,
                            bool requires_grad = false) {
    if (values.size() != shape_size(shape)) {
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fit shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_values({v}, Shape{1}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const T> values() const { return node_->value; }
  // Writable view; meant for leaves (parameters, inputs) outside any live graph.
  std::span<T> mutable_values() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(size(), T(0));
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  // Leaf copy with the same values, no history, no gradient.
  Tensor detach() const { return from_values(node_->value, node_->shape, false); }
  // Independent leaf copy that keeps requires_grad.
  Tensor clone() const {
    return from_values(node_->value, node_->shape, node_->requires_grad);
  }

  // Reverse pass from a single-element tensor. Leaf gradients accumulate
  // across calls; interior gradients are recomputed on every call.
  void backward() const;

  detail::Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node<T>> node_;
};

// Builds the output of a differentiable operation. The backward callback is
// kept only if some input requires a gradient and recording is enabled; it
// receives the output gradient and must accumulate into the inputs' grad
// buffers (present exactly when the input requires_grad).
template <class T, class F>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<Tensor<T>> inputs, F&& backward) {
  Tensor<T> out = Tensor<T>::from_values(std::move(values), std::move(shape));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node->parents.push_back(in.node_ptr());
  }
  node->backward = std::forward<F>(backward);
  return out;
}

template <class T>
void Tensor<T>::backward() const {
  using NodeT = detail::Node<T>;
  if (size() != 1) {
    throw DimensionError("backward() needs a single-element tensor, got " +
                         shape_string(shape()));
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require grad");
  }
  // Iterative post-order DFS gives a topological order.
  std::vector<NodeT*> order;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  std::unordered_set<NodeT*> seen;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, child] = stack.back();
    if (child < n->parents.size()) {
      NodeT* p = n->parents[child++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (NodeT* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->value.size(), T(0));
    } else if (n->grad.size() != n->value.size()) {
      n->grad.assign(n->value.size(), T(0));
    }
  }
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->is_leaf()) n->backward(n->grad.data());
  }
}

}  // namespace ibro::num
