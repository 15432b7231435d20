#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gocnet/checkpoint.hpp"
#include "gocnet/data.hpp"
#include "gocnet/evalmetrics.hpp"

namespace gocnet {

struct TrainConfig {
  double lr0 = 0.0005;
  double gamma = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;
  std::size_t checkpoint_every = 1;  // epochs; 0 writes only the final checkpoint
  std::size_t eval_every = 1;        // epochs; 0 disables held-out evaluation
  std::size_t max_steps = 0;         // stop after this many optimizer steps; 0 = no limit
};

void validate(const TrainConfig& cfg);

/// lr0 * gamma^epoch.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

/// One Adam update of every trainable entry using its accumulated gradient
/// (missing gradients count as zero). t is the 1-based step index. Fixed and
/// buffer entries are never touched. A non-finite gradient throws
/// NumericError naming the parameter before anything is modified.
template <typename T>
void adam_step(ParamStore<T>& store, std::size_t t, double lr, const TrainConfig& cfg);

/// Fake-class probabilities for a batch of images in eval mode, processed in
/// chunks of `chunk` samples.
ScoreSet score_images(Model<float>& model, const Tensor4<float>& images, const std::vector<int>& labels,
                      const AugmentConfig& aug, std::size_t chunk = 64);

/// Input normalisation recorded in a training checkpoint (defaults if absent).
AugmentConfig normalization_from(const Checkpoint& ckpt);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  std::size_t steps = 0;  // cumulative optimizer steps at the end of the epoch
  std::optional<EvalReport> eval;

  /// One JSON object, no trailing newline.
  std::string json() const;
};

struct TrainOptions {
  std::filesystem::path out_dir;                  // metrics.jsonl and checkpoints land here
  std::optional<std::filesystem::path> resume;    // checkpoint to continue from
  bool verbose = false;                           // progress lines on stderr
};

struct TrainResult {
  std::vector<EpochLog> log;  // epochs run by this call
  std::filesystem::path final_checkpoint;
  std::size_t steps = 0;
};

/// Deterministic training loop. Writes `metrics.jsonl` (one line per epoch),
/// `epoch_<k>.gock` per the checkpoint schedule and `final.gock`. On a
/// non-finite loss or gradient it throws NumericError and leaves the most
/// recent checkpoint on disk untouched.
TrainResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const AugmentConfig& aug,
                      const DatasetManifest& manifest, const TrainOptions& opts);

/// Same loop on images already in memory (used by tests and the ablation driver).
TrainResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const AugmentConfig& aug, const ImageSet& train,
                      const ImageSet* test, const TrainOptions& opts);

}  // namespace gocnet
