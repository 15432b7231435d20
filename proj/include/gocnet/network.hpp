#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gocnet/mta.hpp"

namespace gocnet {

/// Model variants. The single-stream ones mirror the module-comparison and
/// single-stream ablation rows; GocNetDual is the two-stream detector (with
/// dual_tp / dual_mta toggles for the dual-stream ablation rows).
enum class Variant { BaseNet, TPBaseNet, BaseNetMTA, BaseNetMTAConv, GocNetSingle, GocNetDual };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

enum class BackboneKind { Mini, ResNet18 };

std::string_view to_string(BackboneKind k);
BackboneKind parse_backbone(std::string_view s);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Mini;
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::size_t image_size = 64;

  /// Standard ResNet-18 layout on 299x299 inputs.
  static BackboneConfig resnet18();
};

struct ModelSpec {
  Variant variant = Variant::GocNetDual;
  BackboneConfig backbone;
  TPConfig tp;
  MTAConfig mta;  // channels is filled in per block
  std::size_t in_channels = 3;
  std::size_t num_classes = 2;
  std::uint64_t seed = 7;
  bool dual_tp = true;   // GocNetDual only: TP in front of the first stream
  bool dual_mta = true;  // GocNetDual only: MTA in every block of the second stream
};

enum class ForwardMode { Train, Eval };

template <typename T>
struct BatchNormLayer {
  Var<T> scale;
  Var<T> shift;
  Var<T> running_mean;
  Var<T> running_var;
};

template <typename T>
struct ConvBn {
  Var<T> weight;
  BatchNormLayer<T> bn;
  std::size_t stride = 1;
  std::size_t pad = 1;
};

template <typename T>
struct BasicBlock {
  std::string name;
  ConvBn<T> conv1;
  ConvBn<T> conv2;
  std::optional<ConvBn<T>> downsample;
  std::optional<MTAState<T>> mta;
};

template <typename T>
struct Backbone {
  ConvBn<T> stem;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::vector<BasicBlock<T>> blocks;
  std::size_t feature_dim = 0;
};

template <typename T>
struct Stream {
  std::string name;  // "stream1", "stream2"
  std::optional<TPConfig> tp;
  Var<T> tp_kernel;  // fixed, present when tp is set
  Backbone<T> backbone;
};

template <typename T>
class Model {
 public:
  ModelSpec spec;
  ParamStore<T> params;
  std::vector<Stream<T>> streams;
  Var<T> fc_weight;
  Var<T> fc_bias;

  /// Logits (n, num_classes, 1, 1).
  Var<T> forward(const Var<T>& images, ForwardMode mode);

  /// Per-stream pooled feature vectors (n, d, 1, 1), before fusion.
  std::vector<Var<T>> stream_features(const Var<T>& images, ForwardMode mode);

  /// Element-wise sum of stream features followed by the linear classifier.
  Var<T> classify(const std::vector<Var<T>>& features);
};

/// Which modules each stream carries, derived from the variant.
struct StreamPlan {
  bool tp = false;
  bool mta = false;
  bool learnable_gate = false;
};
std::vector<StreamPlan> stream_plan(const ModelSpec& spec);

/// Validates the spec; throws ConfigError for any inconsistency.
void validate(const ModelSpec& spec);

/// Builds the model with deterministic initialisation from spec.seed:
/// He-normal conv weights, BN scale 1 / shift 0, zero biases, fixed operator
/// kernels registered as ParamKind::Fixed.
template <typename T>
Model<T> build(const ModelSpec& spec);

template <typename T>
Var<T> basic_block_forward(const Var<T>& x, BasicBlock<T>& block, ForwardMode mode);

template <typename T>
Var<T> backbone_forward(const Var<T>& x, Backbone<T>& backbone, ForwardMode mode);

/// Layer/parameter ledger as text: one line per entry plus per-stream totals.
template <typename T>
std::string parameter_ledger(const Model<T>& model);

}  // namespace gocnet
