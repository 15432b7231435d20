#include "gocnet/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace gocnet {

namespace fs = std::filesystem;

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr0 > 0.0) || !std::isfinite(cfg.lr0)) throw ConfigError("train.lr0 must be > 0");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw ConfigError("train.gamma must be in (0,1]");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ConfigError("train.beta1 must be in [0,1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ConfigError("train.beta2 must be in [0,1)");
  if (!(cfg.epsilon > 0.0)) throw ConfigError("train.epsilon must be > 0");
  if (cfg.batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (batch norm needs two samples)");
  if (cfg.epochs == 0) throw ConfigError("train.epochs must be >= 1");
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.gamma, static_cast<double>(epoch));
}

template <typename T>
void adam_step(ParamStore<T>& store, std::size_t t, double lr, const TrainConfig& cfg) {
  if (t == 0) throw UsageError("adam_step: step index must start at 1");
  for (auto& e : store.entries()) {
    if (!e.trainable()) continue;
    for (T g : e.var.grad().data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + e.name);
    }
  }
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T eps = static_cast<T>(cfg.epsilon);
  const T step = static_cast<T>(lr);
  for (auto& e : store.entries()) {
    if (!e.trainable()) continue;
    const Shape s = e.var.shape();
    if (e.m.empty()) {
      e.m = Tensor4<T>(s);
      e.v = Tensor4<T>(s);
    }
    const auto g = e.var.grad().data();
    auto theta = e.var.mutable_value().data();
    auto m = e.m.data();
    auto v = e.v.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      theta[i] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step(ParamStore<float>&, std::size_t, double, const TrainConfig&);
template void adam_step(ParamStore<double>&, std::size_t, double, const TrainConfig&);

namespace {

Tensor4<float> gather(const Tensor4<float>& images, const std::size_t* idx, std::size_t count) {
  const Shape& s = images.shape();
  const std::size_t per = s.c * s.plane();
  Tensor4<float> out(Shape{count, s.c, s.h, s.w});
  for (std::size_t i = 0; i < count; ++i) {
    std::copy(images.ptr() + idx[i] * per, images.ptr() + (idx[i] + 1) * per, out.ptr() + i * per);
  }
  return out;
}

}  // namespace

ScoreSet score_images(Model<float>& model, const Tensor4<float>& images, const std::vector<int>& labels,
                      const AugmentConfig& aug, std::size_t chunk) {
  const std::size_t n = images.shape().n;
  if (labels.size() != n) throw UsageError("score_images: label count does not match image count");
  ScoreSet set;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    const auto x = Var<float>::leaf(normalize(gather(images, idx.data() + start, count), aug), false);
    const auto probs = softmax(model.forward(x, ForwardMode::Eval).value());
    for (std::size_t i = 0; i < count; ++i) set.add(static_cast<double>(probs[i * 2 + 1]), labels[start + i]);
  }
  return set;
}

std::string EpochLog::json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["steps"] = steps;
  j["train_loss"] = train_loss;
  j["train_acc"] = train_acc;
  if (eval) {
    j["acc"] = eval->acc;
    j["auc"] = eval->auc;
    j["eer"] = eval->eer;
  }
  return j.dump();
}

namespace {

std::string train_config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr0"] = c.lr0;
  j["gamma"] = c.gamma;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  return j.dump();
}

// Everything needed to continue the loop exactly where it stopped.
struct LoopState {
  std::size_t epoch = 0;
  std::size_t batch = 0;  // next batch within the epoch
  std::size_t step = 0;
  std::vector<std::size_t> perm;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t seen = 0;
  Rng shuffle;
  Rng augment;
};

void write_state(const fs::path& path, const Model<float>& model, const TrainConfig& cfg, const AugmentConfig& aug,
                 const LoopState& st) {
  Checkpoint ckpt;
  store_model(ckpt, model);
  ckpt.set_f64("meta.normalize", {aug.normalize ? 1.0 : 0.0, aug.mean[0], aug.mean[1], aug.mean[2], aug.stddev[0],
                                   aug.stddev[1], aug.stddev[2]});
  ckpt.set_bytes("meta.train", train_config_json(cfg));
  ckpt.set_i64("state.epoch", {static_cast<std::int64_t>(st.epoch)});
  ckpt.set_i64("state.batch", {static_cast<std::int64_t>(st.batch)});
  ckpt.set_i64("state.step", {static_cast<std::int64_t>(st.step)});
  ckpt.set_i64("state.perm", std::vector<std::int64_t>(st.perm.begin(), st.perm.end()));
  ckpt.set_f64("state.loss_sum", {st.loss_sum});
  ckpt.set_i64("state.correct", {static_cast<std::int64_t>(st.correct)});
  ckpt.set_i64("state.seen", {static_cast<std::int64_t>(st.seen)});
  ckpt.set_bytes("rng.shuffle", serialize_rng(st.shuffle));
  ckpt.set_bytes("rng.augment", serialize_rng(st.augment));
  save_checkpoint(path, ckpt);
}

LoopState read_state(const Checkpoint& ckpt) {
  LoopState st;
  st.epoch = static_cast<std::size_t>(ckpt.scalar_i64("state.epoch"));
  st.batch = static_cast<std::size_t>(ckpt.scalar_i64("state.batch"));
  st.step = static_cast<std::size_t>(ckpt.scalar_i64("state.step"));
  for (auto v : ckpt.i64("state.perm")) st.perm.push_back(static_cast<std::size_t>(v));
  st.loss_sum = ckpt.f64("state.loss_sum").at(0);
  st.correct = static_cast<std::size_t>(ckpt.scalar_i64("state.correct"));
  st.seen = static_cast<std::size_t>(ckpt.scalar_i64("state.seen"));
  st.shuffle = deserialize_rng(ckpt.bytes("rng.shuffle"));
  st.augment = deserialize_rng(ckpt.bytes("rng.augment"));
  return st;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

// Log lines from an earlier run that precede `epoch`.
std::vector<std::string> retained_log(const fs::path& log_path, std::size_t epoch) {
  std::vector<std::string> kept;
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("epoch")) continue;
    if (j["epoch"].get<std::size_t>() < epoch) kept.push_back(line);
  }
  return kept;
}

}  // namespace

TrainResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const AugmentConfig& aug, const ImageSet& train,
                      const ImageSet* test, const TrainOptions& opts) {
  validate(cfg);
  validate(aug);
  validate(spec);
  const Shape& ds = train.images.shape();
  if (ds.n < 2) throw DataError("training split needs at least two images");
  if (ds.h != spec.backbone.image_size || ds.w != spec.backbone.image_size) {
    throw ConfigError("data image size " + std::to_string(ds.h) + " does not match model image size " +
                      std::to_string(spec.backbone.image_size));
  }
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opts.out_dir.string() + ": " + ec.message());

  std::optional<Model<float>> model;
  LoopState st;
  const fs::path log_path = opts.out_dir / "metrics.jsonl";
  std::vector<std::string> log_lines;
  if (opts.resume) {
    const Checkpoint ckpt = load_checkpoint(*opts.resume);
    if (ckpt.bytes("meta.spec") != spec_to_json(spec)) {
      throw ConfigError("checkpoint " + opts.resume->string() + " was trained with a different model description");
    }
    model.emplace(restore_model(ckpt));
    st = read_state(ckpt);
    if (st.perm.size() != ds.n && st.batch != 0) throw DataError("checkpoint does not match the training set size");
    log_lines = retained_log(log_path, st.epoch);
  } else {
    model.emplace(build<float>(spec));
    st.shuffle = make_rng(cfg.seed, "shuffle");
    st.augment = make_rng(cfg.seed, "augment");
  }
  {
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path.string());
    for (const auto& l : log_lines) log << l << '\n';
  }

  TrainResult result;
  const std::size_t B = cfg.batch_size;
  const std::size_t n = ds.n;
  // A trailing batch of one sample cannot be batch-normalised in train mode and is dropped.
  const std::size_t batches = n / B + (n % B >= 2 ? 1 : 0);
  std::optional<fs::path> last_good;
  if (opts.resume) last_good = *opts.resume;

  auto diverged = [&](const std::string& what) {
    std::string msg = "training diverged at epoch " + std::to_string(st.epoch) + " step " + std::to_string(st.step) +
                      ": " + what;
    msg += last_good ? "; last good checkpoint " + last_good->string() : "; no checkpoint written yet";
    return NumericError(msg);
  };

  bool stopped = false;
  while (st.epoch < cfg.epochs && !stopped) {
    if (st.batch == 0) {
      st.perm = shuffled(n, st.shuffle);
      st.loss_sum = 0.0;
      st.correct = 0;
      st.seen = 0;
    }
    const double lr = lr_schedule(st.epoch, cfg);
    for (; st.batch < batches; ++st.batch) {
      if (cfg.max_steps != 0 && st.step >= cfg.max_steps) {
        stopped = true;
        break;
      }
      const std::size_t start = st.batch * B;
      const std::size_t count = std::min(B, n - start);
      const Tensor4<float> raw = gather(train.images, st.perm.data() + start, count);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = train.labels[st.perm[start + i]];
      const auto x = Var<float>::leaf(augment(raw, aug, st.augment), false);
      try {
        const Var<float> logits = model->forward(x, ForwardMode::Train);
        const Var<float> loss = softmax_cross_entropy(logits, std::span<const int>(labels));
        backward(loss);
        adam_step(model->params, st.step + 1, lr, cfg);
        model->params.zero_grads();
        const float l = loss.value()[0];
        st.loss_sum += static_cast<double>(l) * static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
          const auto& lv = logits.value();
          const int pred = lv[i * 2 + 1] > lv[i * 2] ? 1 : 0;
          st.correct += pred == labels[i];
        }
        st.seen += count;
      } catch (const NumericError& e) {
        throw diverged(e.what());
      }
      ++st.step;
      if (opts.verbose && st.step % 10 == 0) {
        std::cerr << "epoch " << st.epoch << " step " << st.step << " loss " << st.loss_sum / st.seen << "\n";
      }
    }
    if (stopped) break;

    EpochLog entry;
    entry.epoch = st.epoch;
    entry.lr = lr;
    entry.train_loss = st.seen ? st.loss_sum / static_cast<double>(st.seen) : 0.0;
    entry.train_acc = st.seen ? static_cast<double>(st.correct) / static_cast<double>(st.seen) : 0.0;
    entry.steps = st.step;
    if (test && test->images.shape().n > 0 && cfg.eval_every != 0 && (st.epoch + 1) % cfg.eval_every == 0) {
      entry.eval = evaluate(score_images(*model, test->images, test->labels, aug));
    }
    {
      std::ofstream log(log_path, std::ios::app);
      log << entry.json() << '\n';
      if (!log) throw IoError("failed writing " + log_path.string());
    }
    if (opts.verbose) std::cerr << entry.json() << "\n";
    result.log.push_back(entry);
    ++st.epoch;
    st.batch = 0;
    if (cfg.checkpoint_every != 0 && st.epoch % cfg.checkpoint_every == 0) {
      const fs::path p = opts.out_dir / ("epoch_" + std::to_string(st.epoch) + ".gock");
      write_state(p, *model, cfg, aug, st);
      last_good = p;
    }
  }
  result.final_checkpoint = opts.out_dir / "final.gock";
  write_state(result.final_checkpoint, *model, cfg, aug, st);
  result.steps = st.step;
  return result;
}

AugmentConfig normalization_from(const Checkpoint& ckpt) {
  AugmentConfig aug;
  if (!ckpt.has("meta.normalize")) return aug;
  const auto v = ckpt.f64("meta.normalize");
  if (v.size() != 7) throw DataError("checkpoint entry meta.normalize is malformed");
  aug.normalize = v[0] != 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    aug.mean[c] = v[1 + c];
    aug.stddev[c] = v[4 + c];
  }
  return aug;
}

TrainResult train_run(const ModelSpec& spec, const TrainConfig& cfg, const AugmentConfig& aug,
                      const DatasetManifest& manifest, const TrainOptions& opts) {
  if (manifest.count(Split::Train) == 0) throw DataError("manifest has no train records");
  const ImageSet train = load_images(manifest, Split::Train, spec.backbone.image_size);
  const ImageSet test = load_images(manifest, Split::Test, spec.backbone.image_size);
  return train_run(spec, cfg, aug, train, test.labels.empty() ? nullptr : &test, opts);
}

}  // namespace gocnet
