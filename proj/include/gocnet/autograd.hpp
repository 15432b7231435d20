#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gocnet/tensor.hpp"

namespace gocnet {

/// One value in the computation graph. Intermediate nodes are created by the
/// primitives in ops.hpp; leaves are created by Var::leaf (inputs, parameters).
template <typename T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  /// Reads this->grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> propagate;

  /// Grad buffer, allocated as zeros on first use.
  Tensor4<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor4<T>(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor4<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  explicit operator bool() const { return node_ != nullptr; }

  const Tensor4<T>& value() const { return node_->value; }
  Tensor4<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient accumulated so far; zeros when nothing has flowed in yet.
  const Tensor4<T>& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T{0});
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The backward closure and input references are kept
/// only when at least one input requires a gradient.
template <typename T>
Var<T> make_result(Tensor4<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> propagate) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->propagate = std::move(propagate);
  }
  return Var<T>(std::move(node));
}

/// Reverse-mode sweep from a scalar (1,1,1,1) output. Gradients accumulate
/// (+=) into every reachable node that requires them; call zero_grad on
/// leaves between steps.
template <typename T>
void backward(const Var<T>& output);

}  // namespace gocnet
