#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "regcd/tensor.hpp"

namespace regcd {

// One vertex of the dynamically recorded computation graph. `backward` reads
// this node's gradient and accumulates into the gradients of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  bool has_grad() const noexcept { return grad.size() == value.size() && !grad.empty(); }
};

// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Direct mutation is reserved for leaf parameters (optimizer updates, loading).
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  // Gradient after backward(); zeros when nothing was accumulated.
  Tensor grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const noexcept { return node_; }
  static Var from_node(std::shared_ptr<Node> node);

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar root. Leaf gradients accumulate.
void backward(const Var& root);

bool grad_enabled() noexcept;

// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds a result node; the backward closure is dropped when no input needs a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

}  // namespace regcd
