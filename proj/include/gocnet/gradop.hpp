#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gocnet/image_io.hpp"
#include "gocnet/ops.hpp"

namespace gocnet {

enum class KernelName : std::uint8_t {
  Highpass,
  RobertsSharpen,
  Kirsch,
  Laplacian,
  SobelH,
  SobelV,
  PrewittH,
  PrewittV,
  PrewittD,
};

inline constexpr std::size_t kKernelCount = 9;

/// A 3x3 gradient operator, stored in cross-correlation orientation
/// (coeffs[row][col], row 0 is the top neighbour row).
struct GradientKernel {
  KernelName name;
  std::array<std::array<double, 3>, 3> coeffs;
  bool zero_sum;
};

/// The nine operators, in enum order. Built once; never mutated.
const std::array<GradientKernel, kKernelCount>& kernel_registry();
const GradientKernel& gradient_kernel(KernelName name);

/// CLI spelling, e.g. "prewitt-d".
std::string_view kernel_id(KernelName name);
/// Throws ConfigError listing the valid names for an unknown id.
KernelName parse_kernel_name(std::string_view id);

/// Depthwise: every channel is filtered independently, output keeps C channels.
/// SummedSingle: the responses of all channels are summed into one channel.
enum class TPMode { Depthwise, SummedSingle };

std::string_view to_string(TPMode mode);
TPMode parse_tp_mode(std::string_view s);

struct TPConfig {
  KernelName op = KernelName::PrewittD;
  TPMode mode = TPMode::Depthwise;
  Padding padding = Padding::replicate(1);
};

/// Weight tensor realising `kernel` for `channels` inputs:
/// (C,1,3,3) in Depthwise mode, (1,C,3,3) in SummedSingle mode.
template <typename T>
Tensor4<T> operator_weight(const GradientKernel& kernel, std::size_t channels, TPMode mode);

/// Refines `input` with a fixed gradient-operator weight built by operator_weight().
template <typename T>
Var<T> tp_apply(const Var<T>& input, const Var<T>& fixed_weight, const TPConfig& config);

/// Convenience overload building the fixed weight from the registry.
template <typename T>
Tensor4<T> tp_apply(const Tensor4<T>& input, const TPConfig& config);

/// Mean over channels of |operator response| for a (1,C,H,W) image; (1,1,H,W).
Tensor4<float> response_magnitude(const Tensor4<float>& image, KernelName op);

/// 8-bit visualisation of an image's gradient-operator response: per channel,
/// |response| is min-max stretched to [0,255]. A channel with a flat response
/// maps to all zeros.
Image8 trace_image(const Tensor4<float>& image, KernelName op);

}  // namespace gocnet
