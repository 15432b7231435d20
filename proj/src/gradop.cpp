#include "gocnet/gradop.hpp"

#include <algorithm>
#include <cmath>

namespace gocnet {
namespace {

using Grid = std::array<std::array<double, 3>, 3>;

GradientKernel make_kernel(KernelName name, Grid coeffs) {
  double total = 0.0;
  for (const auto& row : coeffs)
    for (double v : row) total += v;
  return GradientKernel{name, coeffs, std::abs(total) < 1e-9};
}

constexpr std::array<std::string_view, kKernelCount> kIds{
    "highpass", "roberts-sharpen", "kirsch", "laplacian", "sobel-h",
    "sobel-v",  "prewitt-h",       "prewitt-v", "prewitt-d"};

}  // namespace

const std::array<GradientKernel, kKernelCount>& kernel_registry() {
  static const std::array<GradientKernel, kKernelCount> registry{
      make_kernel(KernelName::Highpass, {{{-1, -1, -1}, {-1, 8, -1}, {-1, -1, -1}}}),
      // Diagonal Roberts-cross term embedded at the centre: f(y,x) - f(y-1,x-1).
      make_kernel(KernelName::RobertsSharpen, {{{-1, 0, 0}, {0, 1, 0}, {0, 0, 0}}}),
      // East compass mask.
      make_kernel(KernelName::Kirsch, {{{-3, -3, 5}, {-3, 0, 5}, {-3, -3, 5}}}),
      make_kernel(KernelName::Laplacian, {{{0, 1, 0}, {1, -4, 1}, {0, 1, 0}}}),
      make_kernel(KernelName::SobelH, {{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}}),
      make_kernel(KernelName::SobelV, {{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}}),
      make_kernel(KernelName::PrewittH, {{{-1, 0, 1}, {-1, 0, 1}, {-1, 0, 1}}}),
      make_kernel(KernelName::PrewittV, {{{-1, -1, -1}, {0, 0, 0}, {1, 1, 1}}}),
      make_kernel(KernelName::PrewittD, {{{0, 1, 1}, {-1, 0, 1}, {-1, -1, 0}}}),
  };
  return registry;
}

const GradientKernel& gradient_kernel(KernelName name) {
  return kernel_registry()[static_cast<std::size_t>(name)];
}

std::string_view kernel_id(KernelName name) { return kIds[static_cast<std::size_t>(name)]; }

KernelName parse_kernel_name(std::string_view id) {
  for (std::size_t i = 0; i < kIds.size(); ++i) {
    if (kIds[i] == id) return static_cast<KernelName>(i);
  }
  std::string valid;
  for (auto k : kIds) valid += (valid.empty() ? "" : ", ") + std::string(k);
  throw ConfigError("unknown gradient operator '" + std::string(id) + "' (valid: " + valid + ")");
}

std::string_view to_string(TPMode mode) {
  return mode == TPMode::Depthwise ? "depthwise" : "summed";
}

TPMode parse_tp_mode(std::string_view s) {
  if (s == "depthwise") return TPMode::Depthwise;
  if (s == "summed") return TPMode::SummedSingle;
  throw ConfigError("unknown operator mode '" + std::string(s) + "' (valid: depthwise, summed)");
}

template <typename T>
Tensor4<T> operator_weight(const GradientKernel& kernel, std::size_t channels, TPMode mode) {
  if (channels == 0) throw ShapeError("operator_weight: channels must be >= 1");
  const Shape s = mode == TPMode::Depthwise ? Shape{channels, 1, 3, 3} : Shape{1, channels, 3, 3};
  Tensor4<T> w(s);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) w[c * 9 + i * 3 + j] = static_cast<T>(kernel.coeffs[i][j]);
  return w;
}

template <typename T>
Var<T> tp_apply(const Var<T>& input, const Var<T>& fixed_weight, const TPConfig& config) {
  const std::size_t c = input.shape().c;
  if (c == 0) throw ShapeError("tp_apply: input has no channels " + input.shape().str());
  Conv2dOptions opts;
  opts.padding = config.padding;
  opts.groups = config.mode == TPMode::Depthwise ? c : 1;
  return conv2d(input, fixed_weight, Var<T>{}, opts);
}

template <typename T>
Tensor4<T> tp_apply(const Tensor4<T>& input, const TPConfig& config) {
  auto w = Var<T>::leaf(operator_weight<T>(gradient_kernel(config.op), input.shape().c, config.mode));
  return tp_apply(Var<T>::leaf(input), w, config).value();
}

Tensor4<float> response_magnitude(const Tensor4<float>& image, KernelName op) {
  const Shape& s = image.shape();
  TPConfig cfg;
  cfg.op = op;
  const Tensor4<float> r = tp_apply(image, cfg);
  Tensor4<float> out(Shape{s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t p = 0; p < s.plane(); ++p)
        out[n * s.plane() + p] += std::abs(r[(n * s.c + c) * s.plane() + p]) / static_cast<float>(s.c);
  return out;
}

Image8 trace_image(const Tensor4<float>& image, KernelName op) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("trace_image: expected a single (1,C,H,W) image, got " + s.str());
  }
  require_finite(image, "trace_image");
  TPConfig cfg;
  cfg.op = op;
  const Tensor4<float> r = tp_apply(image, cfg);
  Image8 out{s.w, s.h, s.c, std::vector<std::uint8_t>(s.plane() * s.c, 0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    const float* plane = r.ptr() + c * s.plane();
    float lo = std::abs(plane[0]);
    float hi = lo;
    for (std::size_t p = 0; p < s.plane(); ++p) {
      lo = std::min(lo, std::abs(plane[p]));
      hi = std::max(hi, std::abs(plane[p]));
    }
    if (!(hi > lo)) continue;
    const float k = 255.0f / (hi - lo);
    for (std::size_t p = 0; p < s.plane(); ++p) {
      const float v = std::round((std::abs(plane[p]) - lo) * k);
      out.pixels[p * s.c + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
    }
  }
  return out;
}

template Tensor4<float> operator_weight(const GradientKernel&, std::size_t, TPMode);
template Tensor4<double> operator_weight(const GradientKernel&, std::size_t, TPMode);
template Var<float> tp_apply(const Var<float>&, const Var<float>&, const TPConfig&);
template Var<double> tp_apply(const Var<double>&, const Var<double>&, const TPConfig&);
template Tensor4<float> tp_apply(const Tensor4<float>&, const TPConfig&);
template Tensor4<double> tp_apply(const Tensor4<double>&, const TPConfig&);

}  // namespace gocnet
