#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <limits>

#include "gocnet/train.hpp"
#include "support.hpp"

using namespace gocnet;
using namespace gocnet::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

ModelSpec tiny(Variant v) {
  ModelSpec s;
  s.variant = v;
  s.backbone.stage_channels = {8, 16};
  s.backbone.blocks_per_stage = 1;
  s.backbone.image_size = 16;
  s.mta.reduction = 4;
  return s;
}

/// Class 1 carries vertical stripes on top of a noisy grey background.
ImageSet stripes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageSet set;
  set.images = random_tensor(Shape{n, 3, 16, 16}, rng, 0.3, 0.5).cast<float>();
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>((i * 7 + seed) % 2);
    set.labels.push_back(label);
    set.paths.push_back("mem" + std::to_string(i));
    if (label == 0) continue;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; x += 2) set.images.at(i, c, y, x) += 0.3f;
  }
  return set;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = epochs;
  return c;
}

/// Independent Adam on a flat vector.
struct ReferenceAdam {
  std::vector<double> m, v;
  void step(std::vector<double>& theta, const std::vector<double>& g, std::size_t t, double lr, double b1, double b2,
            double eps) {
    if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, static_cast<double>(t)));
      const double vh = v[i] / (1 - std::pow(b2, static_cast<double>(t)));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(lr_schedule(0, c) == 0.0005);
  CHECK(lr_schedule(1, c) == 0.00025);
  for (std::size_t e = 0; e < 12; ++e) CHECK(lr_schedule(e, c) == c.lr0 * std::pow(c.gamma, static_cast<double>(e)));
  c.gamma = 1.0;
  for (std::size_t e = 0; e < 5; ++e) CHECK(lr_schedule(e, c) == 0.0005);
}

TEST_CASE("optimizer constants") {
  const TrainConfig c;
  CHECK(c.lr0 == 0.0005);
  CHECK(c.gamma == 0.5);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.gamma = 0.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = TrainConfig{};
  c.batch_size = 1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_NOTHROW(validate(TrainConfig{}));
}

TEST_CASE("adam") {
  ParamStore<double> store;
  auto w = store.add("w", Tensor4<double>(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -1.0, 2.0}), ParamKind::Trainable);
  auto k = store.add("k", Tensor4<double>(Shape{1, 1, 1, 1}, 3.0), ParamKind::Fixed);
  const TrainConfig cfg;

  SUBCASE("zero gradient leaves parameters unchanged") {
    const auto before = w.value();
    w.grad();  // allocates zeros
    adam_step(store, 1, 0.01, cfg);
    CHECK(bit_equal(w.value(), before));
    adam_step(store, 2, 0.01, cfg);  // no gradient at all counts as zero
    CHECK(bit_equal(w.value(), before));
  }
  SUBCASE("first step matches the closed form") {
    const std::vector<double> g{0.3, -2.0, 1e-3};
    for (std::size_t i = 0; i < 3; ++i) w.node()->grad_buffer()[i] = g[i];
    const auto before = w.value();
    adam_step(store, 1, 0.01, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      const double expect = before[i] - 0.01 * g[i] / (std::abs(g[i]) + cfg.epsilon);
      CHECK(std::abs(w.value()[i] - expect) < 1e-6);
      CHECK(std::abs(std::abs(w.value()[i] - before[i]) - 0.01) < 1e-6);
    }
    CHECK(k.value()[0] == 3.0);
  }
  SUBCASE("ten steps on a quadratic bowl match a reference implementation") {
    const std::vector<double> centre{1.0, 2.0, -3.0}, curv{1.0, 10.0, 0.1};
    std::vector<double> theta{0.5, -1.0, 2.0};
    ReferenceAdam ref;
    for (std::size_t t = 1; t <= 10; ++t) {
      std::vector<double> g(3);
      for (std::size_t i = 0; i < 3; ++i) g[i] = curv[i] * (theta[i] - centre[i]);
      ref.step(theta, g, t, 0.05, cfg.beta1, cfg.beta2, cfg.epsilon);

      store.zero_grads();
      auto diff = add(w, Var<double>::leaf(Tensor4<double>(Shape{1, 1, 1, 3}, std::vector<double>{-1, -2, 3})));
      auto loss = scale(sum(mul(mul(diff, diff), Var<double>::leaf(Tensor4<double>(Shape{1, 1, 1, 3}, curv)))), 0.5);
      backward(loss);
      adam_step(store, t, 0.05, cfg);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(w.value()[i] - theta[i]) < 1e-7);
  }
  SUBCASE("non-finite gradient aborts naming the parameter before any update") {
    auto other = store.add("z", Tensor4<double>(Shape{1, 1, 1, 1}, 1.0), ParamKind::Trainable);
    other.node()->grad_buffer()[0] = 1.0;
    w.node()->grad_buffer()[1] = std::numeric_limits<double>::quiet_NaN();
    const auto before = w.value();
    try {
      adam_step(store, 1, 0.01, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("parameter w") != std::string::npos);
    }
    CHECK(bit_equal(w.value(), before));
    CHECK(other.value()[0] == 1.0);
  }
}

TEST_CASE("checkpoint file format") {
  const auto dir = scratch_dir("ckpt");
  Checkpoint c;
  std::mt19937_64 rng(1);
  const auto t = random_tensor(Shape{2, 3, 4, 5}, rng).cast<float>();
  c.set_tensor("t", t);
  c.set_i64("counters", {1, -2, 1LL << 40});
  c.set_f64("d", {0.1, -1e300});
  c.set_bytes("s", std::string("a\0b", 3));
  save_checkpoint(dir / "x.gock", c);

  const std::string raw = slurp(dir / "x.gock");
  CHECK(raw.substr(0, 4) == "GOCK");
  CHECK(static_cast<unsigned char>(raw[4]) == kCheckpointVersion);

  const Checkpoint back = load_checkpoint(dir / "x.gock");
  CHECK(bit_equal(back.tensor("t"), t));
  CHECK(back.i64("counters") == std::vector<std::int64_t>{1, -2, 1LL << 40});
  CHECK(back.f64("d") == std::vector<double>{0.1, -1e300});
  CHECK(back.bytes("s") == std::string("a\0b", 3));
  CHECK_FALSE(back.has("missing"));
  CHECK_THROWS_AS(back.tensor("missing"), DataError);

  std::ofstream(dir / "bad.gock", std::ios::binary) << "NOPE";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.gock"), DataError);
  std::ofstream(dir / "short.gock", std::ios::binary) << raw.substr(0, raw.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.gock"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.gock"), IoError);
}

TEST_CASE("model round trip through a checkpoint") {
  for (Variant v : {Variant::BaseNet, Variant::GocNetDual, Variant::BaseNetMTAConv}) {
    ModelSpec spec = tiny(v);
    spec.seed = 99;
    spec.tp.op = KernelName::SobelV;
    spec.mta.fusion = FusionMode::Literal;
    const Model<float> m = build<float>(spec);
    CHECK(spec_from_json(spec_to_json(spec)).seed == 99);
    CHECK(spec_to_json(spec_from_json(spec_to_json(spec))) == spec_to_json(spec));
    Checkpoint c;
    store_model(c, m);
    const Model<float> r = restore_model(c);
    REQUIRE(r.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i)
      CHECK(bit_equal(r.params.entries()[i].var.value(), m.params.entries()[i].var.value()));
    CHECK(r.spec.tp.op == KernelName::SobelV);
  }
}

TEST_CASE("training run") {
  const ImageSet train = stripes(40, 1), test = stripes(16, 2);
  const ModelSpec spec = tiny(Variant::GocNetDual);
  const AugmentConfig aug;

  SUBCASE("logs, checkpoints and fixed kernels") {
    const auto dir = scratch_dir("run_basic");
    const TrainResult r = train_run(spec, quick(3), aug, train, &test, TrainOptions{dir, {}, false});
    REQUIRE(r.log.size() == 3);
    CHECK(r.steps == 15);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(r.log[e].epoch == e);
      CHECK(r.log[e].lr == lr_schedule(e, quick(3)));
      CHECK(r.log[e].eval.has_value());
      CHECK(fs::exists(dir / ("epoch_" + std::to_string(e + 1) + ".gock")));
    }
    CHECK(fs::exists(dir / "final.gock"));
    std::ifstream log(dir / "metrics.jsonl");
    std::size_t lines = 0;
    for (std::string l; std::getline(log, l);) {
      CHECK(l.starts_with("{\"epoch\":" + std::to_string(lines)));
      ++lines;
    }
    CHECK(lines == 3);

    const Model<float> fresh = build<float>(spec);
    const Model<float> trained = restore_model(load_checkpoint(dir / "final.gock"));
    std::size_t fixed = 0;
    for (const auto& e : trained.params.entries()) {
      if (e.kind != ParamKind::Fixed) continue;
      ++fixed;
      CHECK(bit_equal(e.var.value(), fresh.params.entry(e.name).var.value()));
    }
    CHECK(fixed == 1 + 2);  // TP kernel plus one MT gate per block
    CHECK_FALSE(bit_equal(trained.params.entry("fc.weight").var.value(), fresh.params.entry("fc.weight").var.value()));
  }
  SUBCASE("two runs are bit-identical") {
    const auto a = scratch_dir("run_a"), b = scratch_dir("run_b");
    train_run(spec, quick(2), aug, train, &test, TrainOptions{a, {}, false});
    train_run(spec, quick(2), aug, train, &test, TrainOptions{b, {}, false});
    CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
    CHECK(slurp(a / "final.gock") == slurp(b / "final.gock"));
  }
  SUBCASE("resume from an epoch checkpoint is bit-exact") {
    const auto full = scratch_dir("run_full"), part = scratch_dir("run_part");
    train_run(spec, quick(3), aug, train, &test, TrainOptions{full, {}, false});
    train_run(spec, quick(1), aug, train, &test, TrainOptions{part, {}, false});
    train_run(spec, quick(3), aug, train, &test, TrainOptions{part, part / "epoch_1.gock", false});
    CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
    CHECK(slurp(full / "final.gock") == slurp(part / "final.gock"));
  }
  SUBCASE("resume from the middle of an epoch is bit-exact") {
    const auto full = scratch_dir("run_full_mid"), part = scratch_dir("run_part_mid");
    train_run(spec, quick(2), aug, train, &test, TrainOptions{full, {}, false});
    TrainConfig stop = quick(2);
    stop.max_steps = 7;
    const TrainResult r = train_run(spec, stop, aug, train, &test, TrainOptions{part, {}, false});
    CHECK(r.steps == 7);
    train_run(spec, quick(2), aug, train, &test, TrainOptions{part, part / "final.gock", false});
    CHECK(slurp(full / "metrics.jsonl") == slurp(part / "metrics.jsonl"));
    CHECK(slurp(full / "final.gock") == slurp(part / "final.gock"));
  }
  SUBCASE("resume rejects a different model") {
    const auto dir = scratch_dir("run_mismatch");
    train_run(spec, quick(1), aug, train, nullptr, TrainOptions{dir, {}, false});
    CHECK_THROWS_AS(train_run(tiny(Variant::BaseNet), quick(2), aug, train, nullptr, TrainOptions{dir, dir / "final.gock", false}),
                    ConfigError);
  }
  SUBCASE("divergence names the last good checkpoint") {
    const auto dir = scratch_dir("run_nan");
    ImageSet bad = train;
    // Poison a single sample; the first epoch may or may not reach it before
    // the checkpoint, so the message must mention either outcome.
    bad.images.at(5, 0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
    try {
      train_run(spec, quick(2), aug, bad, nullptr, TrainOptions{dir, {}, false});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("training diverged at epoch 0") != std::string::npos);
      CHECK(msg.find("no checkpoint written yet") != std::string::npos);
    }
  }
  SUBCASE("image size mismatch") {
    ModelSpec other = spec;
    other.backbone.image_size = 32;
    CHECK_THROWS_AS(train_run(other, quick(1), aug, train, nullptr, TrainOptions{scratch_dir("run_size"), {}, false}),
                    ConfigError);
  }
}

TEST_CASE("a mini BaseNet fits separable data within five epochs") {
  const ImageSet train = stripes(256, 3);
  AugmentConfig aug;
  aug.rotation = aug.perspective = false;
  const TrainResult r =
      train_run(tiny(Variant::BaseNet), quick(5), aug, train, nullptr, TrainOptions{scratch_dir("run_fit"), {}, false});
  double best = 0.0;
  for (const auto& e : r.log) best = std::max(best, e.train_acc);
  CHECK(best >= 0.99);
}

TEST_CASE("scores and stored normalisation") {
  const auto dir = scratch_dir("run_scores");
  const ImageSet train = stripes(16, 4);
  AugmentConfig aug;
  aug.mean = {0.4, 0.5, 0.6};
  train_run(tiny(Variant::BaseNet), quick(1), aug, train, nullptr, TrainOptions{dir, {}, false});
  const Checkpoint c = load_checkpoint(dir / "final.gock");
  const AugmentConfig back = normalization_from(c);
  CHECK(back.mean == aug.mean);
  CHECK(back.stddev == aug.stddev);
  Model<float> m = restore_model(c);
  const ScoreSet s = score_images(m, train.images, train.labels, back, 5);
  REQUIRE(s.size() == 16);
  for (double v : s.scores) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // Chunking changes GEMM blocking, so agreement is to rounding, not bitwise.
  const ScoreSet whole = score_images(m, train.images, train.labels, back, 64);
  for (std::size_t i = 0; i < 16; ++i) CHECK(s.scores[i] == doctest::Approx(whole.scores[i]).epsilon(1e-5));
}
