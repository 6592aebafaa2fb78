// Copyright 2026 The abnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "abnet/tensor.hpp"

namespace abnet {

template <class T>
struct Node;

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t id = detail::next_node_id();
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (!grad.allocated()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }

  void zero_grad() {
    if (node_->grad.allocated()) node_->grad.fill(T{0});
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. When no parent requires a gradient, or recording is
/// off, the result is a detached constant and `backward` is dropped.
template <class T, class Backward>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->leaf = false;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.shared());
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Var<T>(std::move(node));
}

/// Reverse-mode sweep from a scalar loss. Nodes run in descending creation
/// order, which is a fixed topological order. Leaf gradients accumulate until
/// reset; interior state is released afterwards.
template <class T>
void backward(const Var<T>& loss) {
  if (!loss) throw ContractError("backward on a null variable");
  if (loss.value().size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         shape_string(loss.shape()));
  }
  Node<T>* root = loss.node();
  if (root->consumed) {
    throw StateError("backward called twice on the same graph without reset");
  }
  if (!root->requires_grad) {
    root->consumed = true;
    return;
  }

  // Strong references keep every node alive until the sweep finishes, since
  // releasing a parent list may drop the last owner of an upstream node.
  std::vector<std::shared_ptr<Node<T>>> keep_alive;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        keep_alive.push_back(p);
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  root->grad_buffer().fill(T{1});
  for (Node<T>* n : order) {
    if (n->leaf) continue;
    if (n->backward_fn && n->grad.allocated()) n->backward_fn(*n);
  }
  for (Node<T>* n : order) {
    if (n->leaf) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->grad = Tensor<T>();
  }
}

}  // namespace abnet
