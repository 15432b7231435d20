#pragma once

// Shared test helpers: independent loop oracles, random tensors and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gocnet/ops.hpp"

namespace gocnet::testing {

inline Tensor4<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline double max_abs_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Tensor4<float>& a, const Tensor4<double>& b) {
  return max_abs_diff(a.cast<double>(), b);
}

// ---- loop oracles ---------------------------------------------------------

inline double padded_at(const Tensor4<double>& x, std::size_t n, std::size_t c, long y, long xx, PadKind kind) {
  const long h = static_cast<long>(x.shape().h);
  const long w = static_cast<long>(x.shape().w);
  if (y < 0 || y >= h || xx < 0 || xx >= w) {
    if (kind == PadKind::Zero) return 0.0;
    y = std::clamp(y, 0L, h - 1);
    xx = std::clamp(xx, 0L, w - 1);
  }
  return x.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
}

inline Tensor4<double> conv2d_oracle(const Tensor4<double>& x, const Tensor4<double>& w, const Tensor4<double>* bias,
                                     std::size_t stride, Padding pad, std::size_t groups) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const std::size_t oh = (xs.h + 2 * pad.size - ws.h) / stride + 1;
  const std::size_t ow = (xs.w + 2 * pad.size - ws.w) / stride + 1;
  const std::size_t in_per_group = xs.c / groups;
  const std::size_t out_per_group = ws.n / groups;
  Tensor4<double> out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o) {
      const std::size_t g = o / out_per_group;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t ci = 0; ci < in_per_group; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long sy = static_cast<long>(y * stride + ky) - static_cast<long>(pad.size);
                const long sx = static_cast<long>(xx * stride + kx) - static_cast<long>(pad.size);
                acc += w.at(o, ci, ky, kx) * padded_at(x, n, g * in_per_group + ci, sy, sx, pad.kind);
              }
          out.at(n, o, y, xx) = acc;
        }
    }
  return out;
}

inline Tensor4<double> pool_oracle(const Tensor4<double>& x, std::size_t window, std::size_t stride, bool max) {
  const Shape s = x.shape();
  const std::size_t oh = (s.h - window) / stride + 1;
  const std::size_t ow = (s.w - window) / stride + 1;
  Tensor4<double> out(Shape{s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = max ? -INFINITY : 0.0;
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx) {
              const double v = x.at(n, c, y * stride + ky, xx * stride + kx);
              acc = max ? std::max(acc, v) : acc + v;
            }
          out.at(n, c, y, xx) = max ? acc : acc / static_cast<double>(window * window);
        }
  return out;
}

inline Tensor4<double> linear_oracle(const Tensor4<double>& x, const Tensor4<double>& w, const Tensor4<double>* bias) {
  const std::size_t n = x.shape().n, d = x.shape().c, k = w.shape().n;
  Tensor4<double> out(Shape{n, k, 1, 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = bias ? (*bias)[j] : 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += x[i * d + t] * w[j * d + t];
      out[i * k + j] = acc;
    }
  return out;
}

// ---- gradient checking ----------------------------------------------------

/// Builds a scalar loss from the given leaves, in either precision.
template <typename T>
using LossFn = std::function<Var<T>(const std::vector<Var<T>>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "leaf[i] element j"
  std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients of `loss` (evaluated in precision T) against
/// central differences computed in double on the same values. Checks at most
/// `per_leaf` evenly spaced elements of each leaf.
template <typename T>
GradCheckResult grad_check(const std::vector<Tensor4<double>>& values, const LossFn<T>& loss_t,
                           const LossFn<double>& loss_d, double h, double floor, std::size_t per_leaf = 1000) {
  std::vector<Var<T>> leaves;
  for (const auto& v : values) leaves.push_back(Var<T>::leaf(v.template cast<T>(), true));
  backward(loss_t(leaves));

  // The double-precision reference runs on the values as rounded to T.
  std::vector<Tensor4<double>> base;
  for (const auto& l : leaves) base.push_back(l.value().template cast<double>());
  auto eval = [&](const std::vector<Tensor4<double>>& vals) {
    std::vector<Var<double>> ls;
    for (const auto& v : vals) ls.push_back(Var<double>::leaf(v, false));
    return loss_d(ls).value()[0];
  };

  GradCheckResult r;
  for (std::size_t li = 0; li < base.size(); ++li) {
    const std::size_t n = base[li].numel();
    const std::size_t step = std::max<std::size_t>(1, n / per_leaf);
    for (std::size_t j = 0; j < n; j += step) {
      auto plus = base;
      auto minus = base;
      plus[li][j] += h;
      minus[li][j] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
      const double analytic = static_cast<double>(leaves[li].grad()[j]);
      const double e = rel_err(analytic, numeric, floor);
      ++r.checked;
      if (e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst = "leaf " + std::to_string(li) + " element " + std::to_string(j) + " analytic " +
                  std::to_string(analytic) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

/// Scratch directory under the system temp dir, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gocnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace gocnet::testing
