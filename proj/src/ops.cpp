#include "gocnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace gocnet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t o, kh, kw;      // weight
  std::size_t stride, pad, groups;
  PadKind pad_kind;
  std::size_t ho, wo;

  std::size_t cin_per_group() const { return c / groups; }
  std::size_t cout_per_group() const { return o / groups; }
  std::size_t patch() const { return cin_per_group() * kh * kw; }
  std::size_t plane_out() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& wt, const Conv2dOptions& opts) {
  auto mismatch = [&](const std::string& why) {
    return ShapeError("conv2d: " + why + " (input " + x.str() + ", weight " + wt.str() + ")");
  };
  if (opts.stride == 0) throw mismatch("stride must be positive");
  if (opts.groups == 0) throw mismatch("groups must be positive");
  if (x.c % opts.groups != 0 || wt.n % opts.groups != 0) {
    throw mismatch("channels not divisible by groups=" + std::to_string(opts.groups));
  }
  if (wt.c != x.c / opts.groups) throw mismatch("weight in_c/groups does not match input channels");
  if (wt.h % 2 == 0 || wt.w % 2 == 0) throw mismatch("kernel spatial dims must be odd");
  const std::size_t p = opts.padding.size;
  if (x.h + 2 * p < wt.h || x.w + 2 * p < wt.w) throw mismatch("kernel larger than padded input");
  if (opts.padding.kind == PadKind::Replicate && p > 0 && (x.h == 0 || x.w == 0)) {
    throw mismatch("replicate padding on empty input");
  }
  ConvGeometry g{x.n, x.c, x.h, x.w, wt.n, wt.h, wt.w, opts.stride, p, opts.groups,
                 opts.padding.kind, 0, 0};
  g.ho = (x.h + 2 * p - wt.h) / opts.stride + 1;
  g.wo = (x.w + 2 * p - wt.w) / opts.stride + 1;
  return g;
}

/// Maps a padded coordinate to a source index; -1 means a zero-padded tap.
inline long source_index(long i, long extent, PadKind kind) {
  if (i >= 0 && i < extent) return i;
  if (kind == PadKind::Zero) return -1;
  return std::clamp(i, 0L, extent - 1);
}

/// Unfolds every receptive field into the columns of a (C*kh*kw, N*Ho*Wo) matrix.
template <typename T>
RowMat<T> im2col(const Tensor4<T>& x, const ConvGeometry& g) {
  const std::size_t P = g.plane_out();
  RowMat<T> cols(static_cast<Eigen::Index>(g.c * g.kh * g.kw), static_cast<Eigen::Index>(g.n * P));
  std::vector<long> src_col(g.wo);
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const std::size_t row = (c * g.kh + i) * g.kw + j;
        for (std::size_t ow = 0; ow < g.wo; ++ow) {
          src_col[ow] = source_index(static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad),
                                     static_cast<long>(g.w), g.pad_kind);
        }
        T* dst_row = cols.data() + row * cols.cols();
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* plane = x.ptr() + (n * g.c + c) * g.h * g.w;
          T* dst = dst_row + n * P;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = source_index(static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad),
                                         static_cast<long>(g.h), g.pad_kind);
            T* out = dst + oh * g.wo;
            if (ih < 0) {
              std::fill(out, out + g.wo, T{0});
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(ih) * g.w;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              out[ow] = src_col[ow] < 0 ? T{0} : src[src_col[ow]];
            }
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
template <typename T>
void col2im_accumulate(const RowMat<T>& cols, const ConvGeometry& g, Tensor4<T>& dx) {
  const std::size_t P = g.plane_out();
  std::vector<long> src_col(g.wo);
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const std::size_t row = (c * g.kh + i) * g.kw + j;
        for (std::size_t ow = 0; ow < g.wo; ++ow) {
          src_col[ow] = source_index(static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad),
                                     static_cast<long>(g.w), g.pad_kind);
        }
        const T* src_row = cols.data() + row * cols.cols();
        for (std::size_t n = 0; n < g.n; ++n) {
          T* plane = dx.ptr() + (n * g.c + c) * g.h * g.w;
          const T* src = src_row + n * P;
          for (std::size_t oh = 0; oh < g.ho; ++oh) {
            const long ih = source_index(static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad),
                                         static_cast<long>(g.h), g.pad_kind);
            if (ih < 0) continue;
            T* dst = plane + static_cast<std::size_t>(ih) * g.w;
            const T* in = src + oh * g.wo;
            for (std::size_t ow = 0; ow < g.wo; ++ow) {
              if (src_col[ow] >= 0) dst[src_col[ow]] += in[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
Var<T> conv2d_dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
                    const ConvGeometry& g) {
  const auto K = static_cast<Eigen::Index>(g.patch());
  const auto O = static_cast<Eigen::Index>(g.o);
  const std::size_t P = g.plane_out();
  auto cols = std::make_shared<RowMat<T>>(im2col(input.value(), g));

  Eigen::Map<const RowMat<T>> wmat(weight.value().ptr(), O, K);
  RowMat<T> y = wmat * (*cols);

  Tensor4<T> out(Shape{g.n, g.o, g.ho, g.wo});
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const T b = bias ? bias.value()[o] : T{0};
      const T* src = y.data() + o * y.cols() + n * P;
      T* dst = out.ptr() + (n * g.o + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b;
    }
  }
  require_finite(out, "conv2d");

  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [g, cols, P, K, O](Node<T>& self) {
    Node<T>& x = *self.inputs[0];
    Node<T>& w = *self.inputs[1];
    RowMat<T> dy(O, static_cast<Eigen::Index>(g.n * P));
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.o; ++o) {
        const T* src = self.grad.ptr() + (n * g.o + o) * P;
        std::copy(src, src + P, dy.data() + o * dy.cols() + n * P);
      }
    }
    if (w.requires_grad) {
      Eigen::Map<RowMat<T>> dw(w.grad_buffer().ptr(), O, K);
      dw.noalias() += dy * cols->transpose();
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor4<T>& db = self.inputs[2]->grad_buffer();
      for (std::size_t o = 0; o < g.o; ++o) db[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
    }
    if (x.requires_grad) {
      Eigen::Map<const RowMat<T>> wmat(w.value.ptr(), O, K);
      RowMat<T> dcols = wmat.transpose() * dy;
      col2im_accumulate(dcols, g, x.grad_buffer());
    }
  });
}

/// Direct loops for grouped (e.g. depthwise) and single-output convolution.
template <typename T>
Var<T> conv2d_grouped(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
                      const ConvGeometry& g) {
  const std::size_t cig = g.cin_per_group();
  const std::size_t cog = g.cout_per_group();
  // Source offsets (or -1) for every (tap, output position), shared by all planes.
  const std::size_t taps = g.kh * g.kw;
  const std::size_t P = g.plane_out();
  auto index = std::make_shared<std::vector<long>>(taps * P);
  for (std::size_t i = 0; i < g.kh; ++i) {
    for (std::size_t j = 0; j < g.kw; ++j) {
      for (std::size_t oh = 0; oh < g.ho; ++oh) {
        const long ih = source_index(static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad),
                                     static_cast<long>(g.h), g.pad_kind);
        for (std::size_t ow = 0; ow < g.wo; ++ow) {
          const long iw = source_index(static_cast<long>(ow * g.stride + j) - static_cast<long>(g.pad),
                                       static_cast<long>(g.w), g.pad_kind);
          (*index)[(i * g.kw + j) * P + oh * g.wo + ow] =
              (ih < 0 || iw < 0) ? -1 : ih * static_cast<long>(g.w) + iw;
        }
      }
    }
  }

  const Tensor4<T>& x = input.value();
  const Tensor4<T>& wt = weight.value();
  // Double accumulation keeps integer kernels exact on float data, so a
  // zero-sum kernel on a constant plane yields exactly 0.
  Tensor4<T> out(Shape{g.n, g.o, g.ho, g.wo});
  std::vector<double> acc(P);
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const std::size_t grp = o / cog;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ci = 0; ci < cig; ++ci) {
        const T* plane = x.ptr() + (n * g.c + grp * cig + ci) * g.h * g.w;
        const T* k = wt.ptr() + (o * cig + ci) * taps;
        for (std::size_t t = 0; t < taps; ++t) {
          const double kv = static_cast<double>(k[t]);
          const long* idx = index->data() + t * P;
          for (std::size_t p = 0; p < P; ++p) {
            if (idx[p] >= 0) acc[p] += kv * static_cast<double>(plane[idx[p]]);
          }
        }
      }
      const double b = bias ? static_cast<double>(bias.value()[o]) : 0.0;
      T* dst = out.ptr() + (n * g.o + o) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = static_cast<T>(acc[p] + b);
    }
  }
  require_finite(out, "conv2d");

  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [g, index, cig, cog, taps, P](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    T* dx = xn.requires_grad ? xn.grad_buffer().ptr() : nullptr;
    T* dw = wn.requires_grad ? wn.grad_buffer().ptr() : nullptr;
    T* db = (bn && bn->requires_grad) ? bn->grad_buffer().ptr() : nullptr;
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.o; ++o) {
        const std::size_t grp = o / cog;
        const T* gy = self.grad.ptr() + (n * g.o + o) * P;
        if (db) {
          T acc{0};
          for (std::size_t p = 0; p < P; ++p) acc += gy[p];
          db[o] += acc;
        }
        for (std::size_t ci = 0; ci < cig; ++ci) {
          const std::size_t plane_off = (n * g.c + grp * cig + ci) * g.h * g.w;
          const T* plane = xn.value.ptr() + plane_off;
          const T* k = wn.value.ptr() + (o * cig + ci) * taps;
          for (std::size_t t = 0; t < taps; ++t) {
            const long* idx = index->data() + t * P;
            if (dw) {
              T acc{0};
              for (std::size_t p = 0; p < P; ++p) {
                if (idx[p] >= 0) acc += gy[p] * plane[idx[p]];
              }
              dw[(o * cig + ci) * taps + t] += acc;
            }
            if (dx) {
              const T kv = k[t];
              T* dplane = dx + plane_off;
              for (std::size_t p = 0; p < P; ++p) {
                if (idx[p] >= 0) dplane[idx[p]] += kv * gy[p];
              }
            }
          }
        }
      }
    }
  });
}

/// Per-axis strides of `s` broadcast against `out` (0 along broadcast axes).
std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  const std::array<std::size_t, 4> dims{s.n, s.c, s.h, s.w};
  const std::array<std::size_t, 4> full{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  const std::array<std::size_t, 4> od{out.n, out.c, out.h, out.w};
  std::array<std::size_t, 4> st{};
  for (int a = 0; a < 4; ++a) st[a] = (dims[a] == od[a]) ? full[a] : 0;
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto one = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return Shape{one(a.n, b.n), one(a.c, b.c), one(a.h, b.h), one(a.w, b.w)};
}

/// Calls f(out_index, a_index, b_index) over the broadcast output in row-major order.
template <typename F>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 4>& sa,
                        const std::array<std::size_t, 4>& sb, F&& f) {
  std::size_t oi = 0;
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t h = 0; h < out.h; ++h)
        for (std::size_t w = 0; w < out.w; ++w, ++oi) {
          f(oi, n * sa[0] + c * sa[1] + h * sa[2] + w * sa[3],
            n * sb[0] + c * sb[1] + h * sb[2] + w * sb[3]);
        }
}

template <typename T>
T stable_sigmoid(T x) {
  T s;
  if (x >= T{0}) {
    s = T{1} / (T{1} + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T{1} + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  return std::clamp(s, lo, hi);
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              const Conv2dOptions& opts) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), opts);
  if (bias && bias.shape().numel() != g.o) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match out channels " +
                     std::to_string(g.o));
  }
  require_finite(input.value(), "conv2d input");
  if (opts.groups == 1 && g.o > 1) return conv2d_dense(input, weight, bias, g);
  return conv2d_grouped(input, weight, bias, g);
}

namespace {

template <typename T, bool IsMax>
Var<T> pool2d(const Var<T>& input, std::size_t window, std::size_t stride, const char* name) {
  const Shape& s = input.shape();
  if (window == 0 || stride == 0) throw ShapeError(std::string(name) + ": window and stride must be positive");
  if (window > s.h || window > s.w) {
    throw ShapeError(std::string(name) + ": window " + std::to_string(window) +
                     " exceeds spatial extent of " + s.str());
  }
  const std::size_t ho = (s.h - window) / stride + 1;
  const std::size_t wo = (s.w - window) / stride + 1;
  Tensor4<T> out(Shape{s.n, s.c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(IsMax ? out.numel() : 0);
  const T* x = input.value().ptr();
  const T inv = T{1} / static_cast<T>(window * window);
  std::size_t oi = 0;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = nc * s.h * s.w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow, ++oi) {
        T acc = -std::numeric_limits<T>::infinity();
        double total = 0.0;  // double keeps the mean of a constant window exact
        std::size_t best = 0;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oh * stride + i) * s.w + ow * stride + j;
            if constexpr (IsMax) {
              if (x[idx] > acc) {
                acc = x[idx];
                best = idx;
              }
            } else {
              total += static_cast<double>(x[idx]);
            }
          }
        }
        if constexpr (IsMax) {
          out[oi] = acc;
          (*argmax)[oi] = best;
        } else {
          out[oi] = static_cast<T>(total / static_cast<double>(window * window));
        }
      }
    }
  }
  require_finite(out, name);
  return make_result<T>(std::move(out), {input},
                        [argmax, window, stride, ho, wo, s, inv](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().ptr();
    const T* gy = self.grad.ptr();
    if constexpr (IsMax) {
      for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += gy[i];
    } else {
      std::size_t oi = 0;
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const std::size_t base = nc * s.h * s.w;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          for (std::size_t ow = 0; ow < wo; ++ow, ++oi) {
            const T g = gy[oi] * inv;
            for (std::size_t i = 0; i < window; ++i)
              for (std::size_t j = 0; j < window; ++j)
                dx[base + (oh * stride + i) * s.w + ow * stride + j] += g;
          }
        }
      }
    }
  });
}

}  // namespace

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t window, std::size_t stride) {
  return pool2d<T, true>(input, window, stride, "max_pool2d");
}

template <typename T>
Var<T> avg_pool2d(const Var<T>& input, std::size_t window, std::size_t stride) {
  return pool2d<T, false>(input, window, stride, "avg_pool2d");
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  const std::size_t P = s.plane();
  Tensor4<T> out(Shape{s.n, s.c, 1, 1});
  const T* x = input.value().ptr();
  for (std::size_t i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < P; ++p) acc += static_cast<double>(x[i * P + p]);
    out[i] = static_cast<T>(acc / static_cast<double>(P));
  }
  require_finite(out, "global_avg_pool");
  return make_result<T>(std::move(out), {input}, [P, s](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
      const T g = self.grad[i] / static_cast<T>(P);
      for (std::size_t p = 0; p < P; ++p) dx[i * P + p] += g;
    }
  });
}

template <typename T>
Var<T> global_max_pool(const Var<T>& input) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_max_pool: empty spatial extent " + s.str());
  const std::size_t P = s.plane();
  Tensor4<T> out(Shape{s.n, s.c, 1, 1});
  auto argmax = std::make_shared<std::vector<std::size_t>>(s.n * s.c);
  const T* x = input.value().ptr();
  for (std::size_t i = 0; i < s.n * s.c; ++i) {
    std::size_t best = i * P;
    for (std::size_t p = 1; p < P; ++p) {
      if (x[i * P + p] > x[best]) best = i * P + p;
    }
    out[i] = x[best];
    (*argmax)[i] = best;
  }
  require_finite(out, "global_max_pool");
  return make_result<T>(std::move(out), {input}, [argmax](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor4<T> out(input.shape());
  const T* x = input.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  require_finite(out, "relu");
  return make_result<T>(std::move(out), {input}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    T* dx = in.grad_buffer().ptr();
    const T* x = in.value.ptr();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      if (x[i] > T{0}) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  Tensor4<T> out(input.shape());
  const T* x = input.value().ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(x[i]);
  require_finite(out, "sigmoid");
  return make_result<T>(std::move(out), {input}, [](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      const T s = self.value[i];
      dx[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "add");
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  Tensor4<T> out(os);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] + pb[j]; });
  require_finite(out, "add");
  return make_result<T>(std::move(out), {a, b}, [os, sa, sb](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    T* da = na.requires_grad ? na.grad_buffer().ptr() : nullptr;
    T* db = nb.requires_grad ? nb.grad_buffer().ptr() : nullptr;
    const T* g = self.grad.ptr();
    for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (da) da[i] += g[o];
      if (db) db[j] += g[o];
    });
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), "mul");
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  Tensor4<T> out(os);
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = pa[i] * pb[j]; });
  require_finite(out, "mul");
  return make_result<T>(std::move(out), {a, b}, [os, sa, sb](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    T* da = na.requires_grad ? na.grad_buffer().ptr() : nullptr;
    T* db = nb.requires_grad ? nb.grad_buffer().ptr() : nullptr;
    const T* va = na.value.ptr();
    const T* vb = nb.value.ptr();
    const T* g = self.grad.ptr();
    for_each_broadcast(os, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (da) da[i] += g[o] * vb[j];
      if (db) db[j] += g[o] * va[i];
    });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * factor;
  require_finite(out, "scale");
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    T* dx = self.inputs[0]->grad_buffer().ptr();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) dx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (T v : a.value().data()) acc += v;
  Tensor4<T> out(Shape{1, 1, 1, 1}, acc);
  require_finite(out, "sum");
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
  });
}

template <typename T>
Var<T> flatten(const Var<T>& a) {
  const Shape& s = a.shape();
  Tensor4<T> out = a.value().reshaped(Shape{s.n, s.c * s.h * s.w, 1, 1});
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    Tensor4<T>& dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> batch_norm2d(const Var<T>& input, const Var<T>& scale_v, const Var<T>& shift_v,
                    Tensor4<T>& running_mean, Tensor4<T>& running_var,
                    const BatchNormOptions& opts) {
  const Shape& s = input.shape();
  const std::size_t C = s.c;
  const std::size_t P = s.plane();
  const std::array<const Tensor4<T>*, 4> per_channel{&scale_v.value(), &shift_v.value(), &running_mean, &running_var};
  for (const Tensor4<T>* t : per_channel) {
    if (t->numel() != C) {
      throw ShapeError("batch_norm2d: per-channel vector " + t->shape().str() +
                       " does not match input " + s.str());
    }
  }
  const bool train = opts.mode == BatchNormMode::Train;
  if (train && s.n < 2) {
    throw ConfigError("batch_norm2d: Train mode needs a batch of at least 2 (got " +
                      std::to_string(s.n) + "); use Eval mode or a larger batch");
  }
  const std::size_t M = s.n * P;
  auto xhat = std::make_shared<Tensor4<T>>(s);
  auto inv_std = std::make_shared<std::vector<T>>(C);
  const T* x = input.value().ptr();

  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (train) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* px = x + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) mean += px[p];
      }
      mean /= static_cast<double>(M);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* px = x + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) {
          const double d = px[p] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(M);
      const double unbiased = var * static_cast<double>(M) / static_cast<double>(M - 1);
      running_mean[c] = static_cast<T>((1.0 - opts.momentum) * running_mean[c] + opts.momentum * mean);
      running_var[c] = static_cast<T>((1.0 - opts.momentum) * running_var[c] + opts.momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + opts.epsilon));
    (*inv_std)[c] = istd;
    const T m = static_cast<T>(mean);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* px = x + (n * C + c) * P;
      T* ph = xhat->ptr() + (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) ph[p] = (px[p] - m) * istd;
    }
  }

  Tensor4<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T g = scale_v.value()[c];
      const T b = shift_v.value()[c];
      const T* ph = xhat->ptr() + (n * C + c) * P;
      T* po = out.ptr() + (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) po[p] = ph[p] * g + b;
    }
  }
  require_finite(out, "batch_norm2d");

  return make_result<T>(std::move(out), {input, scale_v, shift_v},
                        [xhat, inv_std, train, s, C, P, M](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& gn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    const T* gy = self.grad.ptr();
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = gy + (n * C + c) * P;
        const T* h = xhat->ptr() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) {
          sum_dy += g[p];
          sum_dy_xhat += static_cast<double>(g[p]) * h[p];
        }
      }
      if (gn.requires_grad) gn.grad_buffer()[c] += static_cast<T>(sum_dy_xhat);
      if (bn.requires_grad) bn.grad_buffer()[c] += static_cast<T>(sum_dy);
      if (!xn.requires_grad) continue;
      const T gamma = gn.value[c];
      const T istd = (*inv_std)[c];
      T* dx = xn.grad_buffer().ptr();
      if (train) {
        const T inv_m = T{1} / static_cast<T>(M);
        const T mean_dy = static_cast<T>(sum_dy) * inv_m;
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat) * inv_m;
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* g = gy + (n * C + c) * P;
          const T* h = xhat->ptr() + (n * C + c) * P;
          T* d = dx + (n * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) {
            d[p] += gamma * istd * (g[p] - mean_dy - h[p] * mean_dy_xhat);
          }
        }
      } else {
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* g = gy + (n * C + c) * P;
          T* d = dx + (n * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) d[p] += gamma * istd * g[p];
        }
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  const std::size_t d = xs.c * xs.h * xs.w;
  const std::size_t wd = ws.c * ws.h * ws.w;
  if (d != wd) {
    throw ShapeError("linear: inner dimension mismatch, input " + xs.str() + " vs weight " + ws.str());
  }
  const std::size_t k = ws.n;
  if (bias && bias.shape().numel() != k) {
    throw ShapeError("linear: bias " + bias.shape().str() + " does not match " + std::to_string(k) +
                     " outputs");
  }
  const auto N = static_cast<Eigen::Index>(xs.n);
  const auto D = static_cast<Eigen::Index>(d);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<const RowMat<T>> xm(input.value().ptr(), N, D);
  Eigen::Map<const RowMat<T>> wm(weight.value().ptr(), K, D);
  Tensor4<T> out(Shape{xs.n, k, 1, 1});
  Eigen::Map<RowMat<T>> ym(out.ptr(), N, K);
  ym.noalias() = xm * wm.transpose();
  if (bias) {
    for (Eigen::Index r = 0; r < N; ++r)
      for (Eigen::Index j = 0; j < K; ++j) ym(r, j) += bias.value()[static_cast<std::size_t>(j)];
  }
  require_finite(out, "linear");

  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [N, D, K](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Eigen::Map<const RowMat<T>> gy(self.grad.ptr(), N, K);
    if (xn.requires_grad) {
      Eigen::Map<RowMat<T>> dx(xn.grad_buffer().ptr(), N, D);
      Eigen::Map<const RowMat<T>> wm(wn.value.ptr(), K, D);
      dx.noalias() += gy * wm;
    }
    if (wn.requires_grad) {
      Eigen::Map<RowMat<T>> dw(wn.grad_buffer().ptr(), K, D);
      Eigen::Map<const RowMat<T>> xm(xn.value.ptr(), N, D);
      dw.noalias() += gy.transpose() * xm;
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor4<T>& db = self.inputs[2]->grad_buffer();
      for (Eigen::Index j = 0; j < K; ++j) db[static_cast<std::size_t>(j)] += gy.col(j).sum();
    }
  });
}

template <typename T>
Tensor4<T> softmax(const Tensor4<T>& logits) {
  const Shape& s = logits.shape();
  const std::size_t k = s.c * s.h * s.w;
  Tensor4<T> out(Shape{s.n, k, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* z = logits.ptr() + n * k;
    const T zmax = *std::max_element(z, z + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) out[n * k + j] = std::exp(z[j] - zmax) / denom;
  }
  return out;
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  const std::size_t k = s.c * s.h * s.w;
  if (labels.size() != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     s.str());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at batch index " +
                      std::to_string(i) + " is not a class index in [0," + std::to_string(k) + ")");
    }
  }
  require_finite(logits.value(), "softmax_cross_entropy input");
  auto probs = std::make_shared<Tensor4<T>>(softmax(logits.value()));
  T loss{0};
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* z = logits.value().ptr() + n * k;
    const T zmax = *std::max_element(z, z + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    loss += zmax + std::log(denom) - z[labels[n]];
  }
  loss /= static_cast<T>(s.n);
  Tensor4<T> out(Shape{1, 1, 1, 1}, loss);
  require_finite(out, "softmax_cross_entropy");
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>(std::move(out), {logits}, [probs, lab = std::move(lab), k](Node<T>& self) {
    T* dz = self.inputs[0]->grad_buffer().ptr();
    const T g = self.grad[0] / static_cast<T>(lab.size());
    for (std::size_t n = 0; n < lab.size(); ++n) {
      for (std::size_t j = 0; j < k; ++j) {
        const T target = static_cast<std::size_t>(lab[n]) == j ? T{1} : T{0};
        dz[n * k + j] += g * ((*probs)[n * k + j] - target);
      }
    }
  });
}

#define GOCNET_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const Conv2dOptions&);      \
  template Var<T> max_pool2d(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> avg_pool2d(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> global_avg_pool(const Var<T>&);                                                 \
  template Var<T> global_max_pool(const Var<T>&);                                                 \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> flatten(const Var<T>&);                                                         \
  template Var<T> batch_norm2d(const Var<T>&, const Var<T>&, const Var<T>&, Tensor4<T>&,          \
                               Tensor4<T>&, const BatchNormOptions&);                             \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);                     \
  template Tensor4<T> softmax(const Tensor4<T>&);

GOCNET_INSTANTIATE_OPS(float)
GOCNET_INSTANTIATE_OPS(double)

}  // namespace gocnet
