#pragma once

#include <cstddef>
#include <string>

#include "gocnet/gradop.hpp"
#include "gocnet/param_store.hpp"
#include "gocnet/rng.hpp"

namespace gocnet {

/// How the fused attention map A = sigmoid(M_c) + sigmoid(alpha * M_t) is used.
/// Modulated returns F * A; Literal returns A itself.
enum class FusionMode { Modulated, Literal };

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view s);

struct MTAConfig {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  KernelName op = KernelName::PrewittD;
  TPMode gate_mode = TPMode::Depthwise;
  FusionMode fusion = FusionMode::Modulated;
  double alpha_init = 1.0;
  /// Replace the fixed operator gate by a learnable depthwise 3x3 convolution
  /// (the "plain convolution" ablation).
  bool learnable_gate = false;

  std::size_t hidden() const { return reduction == 0 ? 0 : channels / reduction; }
};

/// Parameters of one attention module. The two 1x1 layers form the shared
/// network applied to both pooled descriptors.
template <typename T>
struct MTAState {
  MTAConfig config;
  Var<T> fc1;   // (C/r, C, 1, 1)
  Var<T> fc2;   // (C, C/r, 1, 1)
  Var<T> alpha; // (1, 1, 1, 1)
  Var<T> gate;  // fixed operator weight, or learnable (C,1,3,3) when config.learnable_gate

  /// Registers parameters under `prefix` (e.g. "stream2.stage1.block0.mta").
  static MTAState create(ParamStore<T>& store, const std::string& prefix, const MTAConfig& config,
                         Rng& rng);
};

/// Validates channels / reduction; throws ConfigError.
void validate(const MTAConfig& config);

/// M_c = S(GlobalAvgPool(F)) + S(GlobalMaxPool(F)), pre-sigmoid, shape (n, C, 1, 1).
template <typename T>
Var<T> dp_gate(const Var<T>& f, const MTAState<T>& state);

/// Shared two-layer network S applied to a pooled (n, C, 1, 1) descriptor.
template <typename T>
Var<T> shared_net(const Var<T>& pooled, const MTAState<T>& state);

/// M_t: F filtered by the gate kernel with replicate padding. (n, C, h, w) in
/// Depthwise mode, (n, 1, h, w) in SummedSingle mode.
template <typename T>
Var<T> mt_gate(const Var<T>& f, const MTAState<T>& state);

/// A = sigmoid(M_c) + sigmoid(alpha * M_t), broadcast to (n, C, h, w).
template <typename T>
Var<T> attention_map(const Var<T>& f, const MTAState<T>& state);

template <typename T>
Var<T> mta_forward(const Var<T>& f, const MTAState<T>& state);

}  // namespace gocnet
