#include "gocnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "gocnet/autograd.hpp"

namespace gocnet {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <typename T>
void require_finite(const Tensor4<T>& t, const std::string& what) {
  const T* p = t.ptr();
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i) +
                         " of tensor " + t.shape().str());
    }
  }
}

template <typename T>
bool bit_equal(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
void backward(const Var<T>& output) {
  if (!output) throw UsageError("backward: empty output");
  if (output.shape().numel() != 1) {
    throw UsageError("backward: output must be a scalar, got shape " + output.shape().str());
  }
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  visited.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->propagate && !node->grad.empty()) node->propagate(*node);
  }
}

template void require_finite(const Tensor4<float>&, const std::string&);
template void require_finite(const Tensor4<double>&, const std::string&);
template bool bit_equal(const Tensor4<float>&, const Tensor4<float>&);
template bool bit_equal(const Tensor4<double>&, const Tensor4<double>&);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace gocnet
