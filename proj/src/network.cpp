#include "gocnet/network.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace gocnet {
namespace {

constexpr std::array<std::string_view, 6> kVariantNames{"BaseNet",        "TPBaseNet",   "BaseNetMTA",
                                                        "BaseNetMTAConv", "GocNetSingle", "GocNetDual"};

template <typename T>
BatchNormLayer<T> make_bn(ParamStore<T>& store, const std::string& prefix, std::size_t c) {
  const Shape s{c, 1, 1, 1};
  return BatchNormLayer<T>{
      store.add(prefix + ".scale", Tensor4<T>(s, T{1}), ParamKind::Trainable),
      store.add(prefix + ".shift", Tensor4<T>(s, T{0}), ParamKind::Trainable),
      store.add(prefix + ".running_mean", Tensor4<T>(s, T{0}), ParamKind::Buffer),
      store.add(prefix + ".running_var", Tensor4<T>(s, T{1}), ParamKind::Buffer),
  };
}

template <typename T>
ConvBn<T> make_conv_bn(ParamStore<T>& store, const std::string& conv_name, const std::string& bn_name,
                       std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride, Rng& rng) {
  ConvBn<T> cb;
  cb.weight = store.add(conv_name + ".weight", he_normal<T>(Shape{out_c, in_c, k, k}, rng), ParamKind::Trainable);
  cb.bn = make_bn(store, bn_name, out_c);
  cb.stride = stride;
  cb.pad = k / 2;
  return cb;
}

template <typename T>
Var<T> conv_bn_forward(const Var<T>& x, ConvBn<T>& cb, ForwardMode mode) {
  Conv2dOptions opts;
  opts.stride = cb.stride;
  opts.padding = Padding::zero(cb.pad);
  BatchNormOptions bo;
  bo.mode = mode == ForwardMode::Train ? BatchNormMode::Train : BatchNormMode::Eval;
  return batch_norm2d(conv2d(x, cb.weight, Var<T>{}, opts), cb.bn.scale, cb.bn.shift,
                      cb.bn.running_mean.mutable_value(), cb.bn.running_var.mutable_value(), bo);
}

template <typename T>
Backbone<T> make_backbone(ParamStore<T>& store, const std::string& prefix, const ModelSpec& spec,
                          std::size_t in_c, const StreamPlan& plan, Rng& rng) {
  const BackboneConfig& cfg = spec.backbone;
  Backbone<T> bb;
  const std::size_t c0 = cfg.stage_channels.front();
  if (cfg.kind == BackboneKind::Mini) {
    bb.stem = make_conv_bn(store, prefix + ".stem.conv", prefix + ".stem.bn", in_c, c0, 3, 1, rng);
    bb.pool_window = 2;
    bb.pool_stride = 2;
  } else {
    bb.stem = make_conv_bn(store, prefix + ".stem.conv", prefix + ".stem.bn", in_c, c0, 7, 2, rng);
    bb.pool_window = 3;
    bb.pool_stride = 2;
  }
  std::size_t channels = c0;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    const std::size_t out_c = cfg.stage_channels[s];
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      BasicBlock<T> block;
      block.name = name;
      block.conv1 = make_conv_bn(store, name + ".conv1", name + ".bn1", channels, out_c, 3, stride, rng);
      block.conv2 = make_conv_bn(store, name + ".conv2", name + ".bn2", out_c, out_c, 3, 1, rng);
      if (stride != 1 || channels != out_c) {
        block.downsample =
            make_conv_bn(store, name + ".downsample.conv", name + ".downsample.bn", channels, out_c, 1, stride, rng);
      }
      if (plan.mta) {
        MTAConfig mc = spec.mta;
        mc.channels = out_c;
        mc.learnable_gate = plan.learnable_gate;
        block.mta = MTAState<T>::create(store, name + ".mta", mc, rng);
      }
      bb.blocks.push_back(std::move(block));
      channels = out_c;
    }
  }
  bb.feature_dim = channels;
  return bb;
}

/// Spatial extent after the stem and every stage, used to reject specs whose
/// image size collapses to nothing.
std::size_t final_extent(const ModelSpec& spec) {
  const BackboneConfig& cfg = spec.backbone;
  auto conv_out = [](std::size_t n, std::size_t k, std::size_t s, std::size_t p) -> std::size_t {
    if (n + 2 * p < k) return 0;
    return (n + 2 * p - k) / s + 1;
  };
  std::size_t e = cfg.image_size;
  if (cfg.kind == BackboneKind::Mini) {
    e = conv_out(e, 3, 1, 1);
    e = e >= 2 ? (e - 2) / 2 + 1 : 0;
  } else {
    e = conv_out(e, 7, 2, 3);
    e = e >= 3 ? (e - 3) / 2 + 1 : 0;
  }
  for (std::size_t s = 1; s < cfg.stage_channels.size() && e > 0; ++s) e = conv_out(e, 3, 2, 1);
  return e;
}

}  // namespace

std::string_view to_string(Variant v) { return kVariantNames[static_cast<std::size_t>(v)]; }

Variant parse_variant(std::string_view s) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == s) return static_cast<Variant>(i);
  }
  std::string valid;
  for (auto n : kVariantNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown model variant '" + std::string(s) + "' (valid: " + valid + ")");
}

std::string_view to_string(BackboneKind k) { return k == BackboneKind::Mini ? "mini" : "resnet18"; }

BackboneKind parse_backbone(std::string_view s) {
  if (s == "mini") return BackboneKind::Mini;
  if (s == "resnet18") return BackboneKind::ResNet18;
  throw ConfigError("unknown backbone '" + std::string(s) + "' (valid: mini, resnet18)");
}

BackboneConfig BackboneConfig::resnet18() {
  return BackboneConfig{BackboneKind::ResNet18, {64, 128, 256, 512}, 2, 299};
}

std::vector<StreamPlan> stream_plan(const ModelSpec& spec) {
  switch (spec.variant) {
    case Variant::BaseNet: return {StreamPlan{false, false, false}};
    case Variant::TPBaseNet: return {StreamPlan{true, false, false}};
    case Variant::BaseNetMTA: return {StreamPlan{false, true, false}};
    case Variant::BaseNetMTAConv: return {StreamPlan{false, true, true}};
    case Variant::GocNetSingle: return {StreamPlan{true, true, false}};
    case Variant::GocNetDual: return {StreamPlan{spec.dual_tp, false, false}, StreamPlan{false, spec.dual_mta, false}};
  }
  throw ConfigError("unhandled variant");
}

void validate(const ModelSpec& spec) {
  const BackboneConfig& cfg = spec.backbone;
  if (cfg.stage_channels.empty()) throw ConfigError("model: stage_channels must not be empty");
  for (std::size_t c : cfg.stage_channels) {
    if (c == 0) throw ConfigError("model: stage channel counts must be positive");
  }
  if (cfg.blocks_per_stage == 0) throw ConfigError("model: blocks_per_stage must be positive");
  if (spec.in_channels == 0) throw ConfigError("model: in_channels must be positive");
  if (spec.num_classes != 2) throw ConfigError("model: only binary classification (num_classes = 2) is supported");
  if (final_extent(spec) == 0) {
    throw ConfigError("model: image_size " + std::to_string(cfg.image_size) + " is too small for " +
                      std::to_string(cfg.stage_channels.size()) + " stages");
  }
  for (const StreamPlan& plan : stream_plan(spec)) {
    if (!plan.mta) continue;
    for (std::size_t c : cfg.stage_channels) {
      MTAConfig mc = spec.mta;
      mc.channels = c;
      try {
        validate(mc);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " for stage with " + std::to_string(c) + " channels");
      }
    }
  }
}

template <typename T>
Model<T> build(const ModelSpec& spec) {
  validate(spec);
  Model<T> model;
  model.spec = spec;
  Rng rng = make_rng(spec.seed, "init");
  const auto plans = stream_plan(spec);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    Stream<T> st;
    st.name = "stream" + std::to_string(i + 1);
    std::size_t in_c = spec.in_channels;
    if (plans[i].tp) {
      st.tp = spec.tp;
      st.tp_kernel = model.params.add(st.name + ".tp.kernel",
                                      operator_weight<T>(gradient_kernel(spec.tp.op), in_c, spec.tp.mode),
                                      ParamKind::Fixed);
      if (spec.tp.mode == TPMode::SummedSingle) in_c = 1;
    }
    st.backbone = make_backbone(model.params, st.name, spec, in_c, plans[i], rng);
    model.streams.push_back(std::move(st));
  }
  const std::size_t d = model.streams.front().backbone.feature_dim;
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor4<T> fc(Shape{spec.num_classes, d, 1, 1});
  for (std::size_t i = 0; i < fc.numel(); ++i) fc[i] = static_cast<T>(dist(rng));
  model.fc_weight = model.params.add("fc.weight", std::move(fc), ParamKind::Trainable);
  model.fc_bias = model.params.add("fc.bias", Tensor4<T>(Shape{spec.num_classes, 1, 1, 1}), ParamKind::Trainable);
  return model;
}

template <typename T>
Var<T> basic_block_forward(const Var<T>& x, BasicBlock<T>& block, ForwardMode mode) {
  Var<T> branch = relu(conv_bn_forward(x, block.conv1, mode));
  branch = conv_bn_forward(branch, block.conv2, mode);
  if (block.mta) branch = mta_forward(branch, *block.mta);
  Var<T> shortcut = block.downsample ? conv_bn_forward(x, *block.downsample, mode) : x;
  if (branch.shape() != shortcut.shape()) {
    throw ShapeError(block.name + ": residual branch " + branch.shape().str() + " does not match shortcut " +
                     shortcut.shape().str());
  }
  return relu(add(branch, shortcut));
}

template <typename T>
Var<T> backbone_forward(const Var<T>& x, Backbone<T>& bb, ForwardMode mode) {
  Var<T> h = relu(conv_bn_forward(x, bb.stem, mode));
  h = max_pool2d(h, bb.pool_window, bb.pool_stride);
  for (auto& block : bb.blocks) h = basic_block_forward(h, block, mode);
  return flatten(global_avg_pool(h));
}

template <typename T>
std::vector<Var<T>> Model<T>::stream_features(const Var<T>& images, ForwardMode mode) {
  const Shape& s = images.shape();
  const std::size_t size = spec.backbone.image_size;
  if (s.c != spec.in_channels || s.h != size || s.w != size) {
    throw ShapeError("model expects input (n," + std::to_string(spec.in_channels) + "," + std::to_string(size) +
                     "," + std::to_string(size) + "), got " + s.str());
  }
  std::vector<Var<T>> feats;
  for (auto& st : streams) {
    Var<T> x = st.tp ? tp_apply(images, st.tp_kernel, *st.tp) : images;
    feats.push_back(backbone_forward(x, st.backbone, mode));
  }
  return feats;
}

template <typename T>
Var<T> Model<T>::classify(const std::vector<Var<T>>& features) {
  Var<T> fused = features.front();
  for (std::size_t i = 1; i < features.size(); ++i) fused = add(fused, features[i]);
  return linear(fused, fc_weight, fc_bias);
}

template <typename T>
Var<T> Model<T>::forward(const Var<T>& images, ForwardMode mode) {
  return classify(stream_features(images, mode));
}

template <typename T>
std::string parameter_ledger(const Model<T>& model) {
  std::ostringstream os;
  os << "model " << to_string(model.spec.variant) << " backbone " << to_string(model.spec.backbone.kind)
     << " image " << model.spec.backbone.image_size << "\n";
  os << std::left << std::setw(56) << "name" << std::setw(18) << "shape" << std::setw(10) << "count"
     << "kind\n";
  for (const auto& e : model.params.entries()) {
    os << std::left << std::setw(56) << e.name << std::setw(18) << e.var.shape().str() << std::setw(10)
       << e.var.value().numel() << to_string(e.kind) << "\n";
  }
  std::size_t streams_total = 0;
  for (const auto& st : model.streams) {
    const std::size_t n = model.params.trainable_count(st.name + ".");
    streams_total += n;
    os << "total " << st.name << " trainable " << n << "\n";
  }
  const std::size_t fc = model.params.trainable_count("fc.");
  os << "total fc trainable " << fc << "\n";
  os << "total trainable " << model.params.count(ParamKind::Trainable) << "\n";
  os << "total fixed " << model.params.count(ParamKind::Fixed) << "\n";
  os << "total buffer " << model.params.count(ParamKind::Buffer) << "\n";
  return os.str();
}

#define GOCNET_INSTANTIATE_NETWORK(T)                                                   \
  template class Model<T>;                                                              \
  template Model<T> build(const ModelSpec&);                                            \
  template Var<T> basic_block_forward(const Var<T>&, BasicBlock<T>&, ForwardMode);      \
  template Var<T> backbone_forward(const Var<T>&, Backbone<T>&, ForwardMode);           \
  template std::string parameter_ledger(const Model<T>&);

GOCNET_INSTANTIATE_NETWORK(float)
GOCNET_INSTANTIATE_NETWORK(double)

}  // namespace gocnet
