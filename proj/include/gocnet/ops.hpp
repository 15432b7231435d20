#pragma once

#include <cstddef>
#include <span>

#include "gocnet/autograd.hpp"

namespace gocnet {

enum class PadKind { Zero, Replicate };

struct Padding {
  PadKind kind = PadKind::Zero;
  std::size_t size = 0;

  static constexpr Padding zero(std::size_t p) { return {PadKind::Zero, p}; }
  static constexpr Padding replicate(std::size_t p) { return {PadKind::Replicate, p}; }
  friend constexpr bool operator==(const Padding&, const Padding&) = default;
};

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding{};
  std::size_t groups = 1;
};

/// 2-D cross-correlation (no kernel flip). `weight` is (out_c, in_c/groups, kh, kw)
/// with odd kh, kw; `bias` may be an empty Var. Output spatial size is
/// floor((h + 2p - kh) / stride) + 1.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              const Conv2dOptions& opts);

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t window, std::size_t stride);

/// Always divides by window^2.
template <typename T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t window, std::size_t stride);

/// (n, c, h, w) -> (n, c, 1, 1)
template <typename T>
Var<T> global_avg_pool(const Var<T>& input);
template <typename T>
Var<T> global_max_pool(const Var<T>& input);

template <typename T>
Var<T> relu(const Var<T>& input);

/// Logistic function. Outputs are clamped to the open interval (0, 1) so that
/// saturated inputs never produce exactly 0 or 1.
template <typename T>
Var<T> sigmoid(const Var<T>& input);

/// Elementwise a + b with broadcasting along any axis where one side has extent 1.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Elementwise a * b with the same broadcasting rule as add().
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Sum of every element, as a (1,1,1,1) tensor.
template <typename T>
Var<T> sum(const Var<T>& a);

/// (n, c, h, w) -> (n, c*h*w, 1, 1)
template <typename T>
Var<T> flatten(const Var<T>& a);

enum class BatchNormMode { Train, Eval };

struct BatchNormOptions {
  BatchNormMode mode = BatchNormMode::Train;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Per-channel batch normalization. In Train mode the batch statistics are used
/// and `running_mean` / `running_var` are updated in place (unbiased variance);
/// Eval mode reads them and mutates nothing.
template <typename T>
Var<T> batch_norm2d(const Var<T>& input, const Var<T>& scale, const Var<T>& shift,
                    Tensor4<T>& running_mean, Tensor4<T>& running_var,
                    const BatchNormOptions& opts);

/// Affine map on flattened features: input (n, d, 1, 1), weight (k, d, 1, 1),
/// bias (k, 1, 1, 1) or empty. Output (n, k, 1, 1).
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

/// Mean over the batch of -log softmax(logits)[label]. logits are (n, k, 1, 1).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Row-wise softmax probabilities of (n, k, 1, 1) logits; no graph is recorded.
template <typename T>
Tensor4<T> softmax(const Tensor4<T>& logits);

}  // namespace gocnet
