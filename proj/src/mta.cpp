#include "gocnet/mta.hpp"

#include <cmath>

namespace gocnet {

std::string_view to_string(FusionMode mode) {
  return mode == FusionMode::Modulated ? "modulated" : "literal";
}

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "modulated") return FusionMode::Modulated;
  if (s == "literal") return FusionMode::Literal;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "' (valid: modulated, literal)");
}

void validate(const MTAConfig& config) {
  if (config.channels == 0) throw ConfigError("mta: channels must be positive");
  if (config.reduction == 0) throw ConfigError("mta: reduction must be positive");
  if (config.hidden() < 1) {
    throw ConfigError("mta: channels/reduction must be >= 1 (channels=" + std::to_string(config.channels) +
                      ", reduction=" + std::to_string(config.reduction) + ")");
  }
  if (!std::isfinite(config.alpha_init)) throw ConfigError("mta: alpha_init must be finite");
}

template <typename T>
MTAState<T> MTAState<T>::create(ParamStore<T>& store, const std::string& prefix, const MTAConfig& config,
                                Rng& rng) {
  validate(config);
  const std::size_t c = config.channels;
  const std::size_t h = config.hidden();
  MTAState<T> s;
  s.config = config;
  s.fc1 = store.add(prefix + ".fc1.weight", he_normal<T>(Shape{h, c, 1, 1}, rng), ParamKind::Trainable);
  s.fc2 = store.add(prefix + ".fc2.weight", he_normal<T>(Shape{c, h, 1, 1}, rng), ParamKind::Trainable);
  s.alpha = store.add(prefix + ".alpha", Tensor4<T>(Shape{1, 1, 1, 1}, static_cast<T>(config.alpha_init)),
                      ParamKind::Trainable);
  if (config.learnable_gate) {
    s.gate = store.add(prefix + ".gate.weight", he_normal<T>(Shape{c, 1, 3, 3}, rng), ParamKind::Trainable);
  } else {
    s.gate = store.add(prefix + ".mt_kernel", operator_weight<T>(gradient_kernel(config.op), c, config.gate_mode),
                       ParamKind::Fixed);
  }
  return s;
}

namespace {

template <typename T>
void check_channels(const Var<T>& f, const MTAState<T>& state, const char* op) {
  if (f.shape().c != state.config.channels) {
    throw ShapeError(std::string(op) + ": input " + f.shape().str() + " has " + std::to_string(f.shape().c) +
                     " channels, module expects " + std::to_string(state.config.channels));
  }
}

}  // namespace

template <typename T>
Var<T> shared_net(const Var<T>& pooled, const MTAState<T>& state) {
  const Conv2dOptions pointwise{};
  return conv2d(relu(conv2d(pooled, state.fc1, Var<T>{}, pointwise)), state.fc2, Var<T>{}, pointwise);
}

template <typename T>
Var<T> dp_gate(const Var<T>& f, const MTAState<T>& state) {
  check_channels(f, state, "dp_gate");
  return add(shared_net(global_avg_pool(f), state), shared_net(global_max_pool(f), state));
}

template <typename T>
Var<T> mt_gate(const Var<T>& f, const MTAState<T>& state) {
  check_channels(f, state, "mt_gate");
  Conv2dOptions opts;
  if (state.config.learnable_gate) {
    opts.padding = Padding::zero(1);
    opts.groups = f.shape().c;
    return conv2d(f, state.gate, Var<T>{}, opts);
  }
  TPConfig tp;
  tp.op = state.config.op;
  tp.mode = state.config.gate_mode;
  return tp_apply(f, state.gate, tp);
}

template <typename T>
Var<T> attention_map(const Var<T>& f, const MTAState<T>& state) {
  if (!std::isfinite(state.alpha.value()[0])) {
    throw NumericError("mta: alpha is not finite");
  }
  Var<T> channel = sigmoid(dp_gate(f, state));
  Var<T> trace = sigmoid(mul(mt_gate(f, state), state.alpha));
  // (n,C,1,1) + (n,C,h,w) or (n,1,h,w) broadcasts to (n,C,h,w).
  return add(channel, trace);
}

template <typename T>
Var<T> mta_forward(const Var<T>& f, const MTAState<T>& state) {
  Var<T> a = attention_map(f, state);
  if (state.config.fusion == FusionMode::Literal) return a;
  return mul(f, a);
}

#define GOCNET_INSTANTIATE_MTA(T)                                        \
  template struct MTAState<T>;                                           \
  template Var<T> shared_net(const Var<T>&, const MTAState<T>&);         \
  template Var<T> dp_gate(const Var<T>&, const MTAState<T>&);            \
  template Var<T> mt_gate(const Var<T>&, const MTAState<T>&);            \
  template Var<T> attention_map(const Var<T>&, const MTAState<T>&);      \
  template Var<T> mta_forward(const Var<T>&, const MTAState<T>&);

GOCNET_INSTANTIATE_MTA(float)
GOCNET_INSTANTIATE_MTA(double)

}  // namespace gocnet
