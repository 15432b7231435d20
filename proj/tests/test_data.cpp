#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <complex>
#include <fstream>

#include "gocnet/data.hpp"
#include "support.hpp"

using namespace gocnet;
using namespace gocnet::testing;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Image8 solid(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> rgb) {
  Image8 img{w, h, 3, {}};
  for (std::size_t i = 0; i < w * h; ++i) img.pixels.insert(img.pixels.end(), rgb.begin(), rgb.end());
  return img;
}

Image8 random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  Image8 img{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

// Independent bilinear reference: half-pixel centres, clamped source coordinates.
double bilinear_oracle(const Tensor4<float>& img, std::size_t c, std::size_t oy, std::size_t ox, std::size_t oh,
                       std::size_t ow) {
  const double ih = static_cast<double>(img.shape().h), iw = static_cast<double>(img.shape().w);
  auto coord = [](double o, double scale, double limit) {
    return std::clamp((o + 0.5) * scale - 0.5, 0.0, limit - 1.0);
  };
  const double sy = coord(static_cast<double>(oy), ih / static_cast<double>(oh), ih);
  const double sx = coord(static_cast<double>(ox), iw / static_cast<double>(ow), iw);
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, img.shape().h - 1), x1 = std::min(x0 + 1, img.shape().w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  const double top = img.at(0, c, y0, x0) * (1 - fx) + img.at(0, c, y0, x1) * fx;
  const double bot = img.at(0, c, y1, x0) * (1 - fx) + img.at(0, c, y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

AugmentConfig only_normalize() {
  AugmentConfig a;
  a.hflip = a.rotation = a.perspective = false;
  return a;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const auto dir = scratch_dir("manifest");
  write_png(dir / "a.png", solid(4, 4, {1, 2, 3}));
  write_png(dir / "b.png", solid(4, 4, {4, 5, 6}));

  SUBCASE("three rows in file order") {
    write_file(dir / "m.csv", "a.png,0,train\nb.png,1,test\na.png,1,train\n");
    const auto m = load_manifest(dir / "m.csv");
    REQUIRE(m.records.size() == 3);
    CHECK(m.records[0].path == "a.png");
    CHECK(m.records[1].label == 1);
    CHECK(m.records[1].split == Split::Test);
    CHECK(m.records[2].path == "a.png");
    CHECK(m.count(Split::Train) == 2);
    CHECK(m.resolve(m.records[1]) == dir / "b.png");
  }
  SUBCASE("header and blank lines are accepted") {
    write_file(dir / "m.csv", "path,label,split\na.png,0,train\n\nb.png,1,test\n");
    CHECK(load_manifest(dir / "m.csv").records.size() == 2);
  }
  SUBCASE("bad label names the line and the value") {
    write_file(dir / "m.csv", "img.png,2,train\n");
    const std::string msg = error_of([&] { load_manifest(dir / "m.csv", false); });
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("'2'") != std::string::npos);
  }
  SUBCASE("wrong column count") {
    write_file(dir / "m.csv", "path,label,split\na.png,0,train\na.png,0\n");
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("line 3") != std::string::npos);
  }
  SUBCASE("bad split") {
    write_file(dir / "m.csv", "a.png,0,validation\n");
    CHECK(error_of([&] { load_manifest(dir / "m.csv"); }).find("line 1") != std::string::npos);
  }
  SUBCASE("missing image") {
    write_file(dir / "m.csv", "a.png,0,train\nnope.png,1,test\n");
    const std::string msg = error_of([&] { load_manifest(dir / "m.csv"); });
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("nope.png") != std::string::npos);
    CHECK_NOTHROW(load_manifest(dir / "m.csv", false));
  }
  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(load_manifest(dir / "absent.csv"), DataError);
  }
  SUBCASE("write then load round-trips") {
    DatasetManifest m;
    m.root = dir;
    m.records = {{"a.png", 0, Split::Train}, {"b.png", 1, Split::Test}};
    write_manifest(dir / "w.csv", m);
    const auto back = load_manifest(dir / "w.csv");
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[1].path == "b.png");
    CHECK(back.records[1].split == Split::Test);
  }
}

TEST_CASE("a 60k-row manifest loads in under a second") {
  const auto dir = scratch_dir("manifest_big");
  fs::create_directories(dir / "img");
  std::ostringstream csv;
  csv << "path,label,split\n";
  for (int i = 0; i < 64; ++i) write_png(dir / "img" / (std::to_string(i) + ".png"), solid(2, 2, {0, 0, 0}));
  for (int i = 0; i < 60000; ++i)
    csv << "img/" << (i % 64) << ".png," << (i % 2) << ',' << (i % 5 == 0 ? "test" : "train") << '\n';
  write_file(dir / "m.csv", csv.str());
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = load_manifest(dir / "m.csv");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(m.records.size() == 60000);
  CHECK(secs < 1.0);
}

TEST_CASE("image decoding") {
  const auto dir = scratch_dir("decode");
  std::mt19937_64 rng(1);

  SUBCASE("png and ppm round trips") {
    const Image8 img = random_image(7, 5, rng);
    write_png(dir / "x.png", img);
    write_ppm(dir / "x.ppm", img);
    CHECK(read_image(dir / "x.png").pixels == img.pixels);
    CHECK(read_image(dir / "x.ppm").pixels == img.pixels);
    write_file(dir / "ascii.ppm", "P3\n2 1\n255\n255 0 0  0 128 255\n");
    CHECK(read_image(dir / "ascii.ppm").pixels == std::vector<std::uint8_t>{255, 0, 0, 0, 128, 255});
  }
  SUBCASE("grayscale png is expanded to rgb") {
    Image8 g{3, 2, 1, {0, 50, 100, 150, 200, 250}};
    write_png(dir / "g.png", g);
    const Image8 rgb = read_image(dir / "g.png");
    CHECK(rgb.channels == 3);
    CHECK(rgb.at(1, 2, 0) == 250);
    CHECK(rgb.at(1, 2, 2) == 250);
  }
  SUBCASE("corrupt and missing files name the path") {
    write_file(dir / "bad.png", "\x89PNG\r\n\x1a\ngarbage");
    CHECK(error_of([&] { read_image(dir / "bad.png"); }).find("bad.png") != std::string::npos);
    write_file(dir / "what.txt", "hello");
    CHECK(error_of([&] { read_image(dir / "what.txt"); }).find("what.txt") != std::string::npos);
    CHECK(error_of([&] { read_image(dir / "missing.png"); }).find("missing.png") != std::string::npos);
  }
  SUBCASE("same-size decode is a pass-through") {
    const Image8 img = random_image(299, 299, rng);
    write_png(dir / "big.png", img);
    const auto t = decode_and_resize(dir / "big.png", 299, 299);
    CHECK(bit_equal(t, to_tensor(img)));
    CHECK(to_image8(t).pixels == img.pixels);
  }
  SUBCASE("solid colour stays exact at any size") {
    write_png(dir / "solid.png", solid(37, 23, {10, 128, 240}));
    const auto t = decode_and_resize(dir / "solid.png", 64, 64);
    for (std::size_t c = 0; c < 3; ++c) {
      const float expect = std::array<float, 3>{10, 128, 240}[c] / 255.0f;
      for (std::size_t p = 0; p < 64 * 64; ++p) CHECK(t[c * 4096 + p] == expect);
    }
  }
}

TEST_CASE("bilinear resize matches the loop oracle") {
  Tensor4<float> board(Shape{1, 3, 16, 16});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) board.at(0, c, y, x) = ((x / 2 + y / 2) % 2) ? 1.0f : 0.0f;
  std::mt19937_64 rng(2);
  const auto noise = random_tensor(Shape{1, 3, 13, 9}, rng, 0.0, 1.0).cast<float>();
  for (const auto& [img, oh, ow] : {std::tuple{board, 8, 8}, std::tuple{board, 11, 20}, std::tuple{noise, 26, 5}}) {
    const auto out = resize_bilinear(img, oh, ow);
    double worst = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < static_cast<std::size_t>(oh); ++y)
        for (std::size_t x = 0; x < static_cast<std::size_t>(ow); ++x)
          worst = std::max(worst, std::abs(out.at(0, c, y, x) - bilinear_oracle(img, c, y, x, oh, ow)));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("augmentation") {
  std::mt19937_64 gen(3);
  const auto batch = random_tensor(Shape{4, 3, 16, 16}, gen, 0.0, 1.0).cast<float>();

  SUBCASE("normalisation only gives 2x - 1") {
    Rng rng(1);
    const auto out = augment(batch, only_normalize(), rng);
    for (std::size_t i = 0; i < batch.numel(); ++i) CHECK(out[i] == doctest::Approx(2.0 * batch[i] - 1.0).epsilon(1e-6));
  }
  SUBCASE("flip with probability one twice restores the batch") {
    AugmentConfig a = only_normalize();
    a.normalize = false;
    a.hflip = true;
    a.hflip_prob = 1.0;
    Rng rng(2);
    const auto once = augment(batch, a, rng);
    CHECK_FALSE(bit_equal(once, batch));
    CHECK(bit_equal(augment(once, a, rng), batch));
    CHECK(bit_equal(hflip(hflip(batch)), batch));
  }
  SUBCASE("fixed seed gives a bit-identical batch") {
    AugmentConfig a;
    Rng r1(42), r2(42), r3(43);
    const auto x = augment(batch, a, r1);
    CHECK(bit_equal(x, augment(batch, a, r2)));
    CHECK_FALSE(bit_equal(x, augment(batch, a, r3)));
  }
  SUBCASE("geometric identities") {
    CHECK(max_abs_diff(rotate(batch, 0.0), batch.cast<double>()) < 1e-6);
    CHECK(max_abs_diff(warp(batch, {1, 0, 0, 0, 1, 0, 0, 0, 1}), batch.cast<double>()) < 1e-6);
    const auto r = rotate(rotate(batch, 90.0), -90.0);
    double inner = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 2; y < 14; ++y)
        for (std::size_t x = 2; x < 14; ++x) inner = std::max(inner, static_cast<double>(std::abs(r.at(0, c, y, x) - batch.at(0, c, y, x))));
    CHECK(inner < 1e-4);
  }
  SUBCASE("homography maps the given corners") {
    const std::array<std::array<double, 2>, 4> from{{{0, 0}, {15, 0}, {15, 15}, {0, 15}}};
    const std::array<std::array<double, 2>, 4> to{{{1, 2}, {14, -1}, {16, 13}, {-2, 15}}};
    const auto h = homography(from, to);
    for (std::size_t k = 0; k < 4; ++k) {
      const double x = from[k][0], y = from[k][1];
      const double w = h[6] * x + h[7] * y + h[8];
      CHECK((h[0] * x + h[1] * y + h[2]) / w == doctest::Approx(to[k][0]).epsilon(1e-9));
      CHECK((h[3] * x + h[4] * y + h[5]) / w == doctest::Approx(to[k][1]).epsilon(1e-9));
    }
  }
  SUBCASE("config validation") {
    AugmentConfig a;
    a.hflip_prob = 1.5;
    CHECK_THROWS_AS(validate(a), ConfigError);
    a = AugmentConfig{};
    a.stddev[1] = 0.0;
    CHECK_THROWS_AS(validate(a), ConfigError);
    CHECK_NOTHROW(validate(AugmentConfig{}));
  }
}

TEST_CASE("synthetic pairs") {
  SynthConfig cfg;
  cfg.kind = SynthKind::Mixed;

  SUBCASE("deterministic per index") {
    const auto a = synth_pair(cfg, 5), b = synth_pair(cfg, 5), c = synth_pair(cfg, 6);
    CHECK(a.fake.pixels == b.fake.pixels);
    CHECK(a.real.pixels == b.real.pixels);
    CHECK(a.real.pixels != c.real.pixels);
    CHECK(a.kind == SynthKind::PeriodicFingerprint);
    CHECK(c.kind == SynthKind::BlendPatch);
  }
  SUBCASE("blend difference is confined to the mask") {
    SynthConfig b = cfg;
    b.kind = SynthKind::BlendPatch;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto p = synth_pair(b, i);
      bool inside_changed = false;
      for (std::size_t y = 0; y < p.real.height; ++y)
        for (std::size_t x = 0; x < p.real.width; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const bool changed = p.real.at(y, x, ch) != p.fake.at(y, x, ch);
            if (p.mask.at(y, x, 0) == kMaskClean) CHECK_FALSE(changed);
            inside_changed |= changed;
          }
      CHECK(inside_changed);
    }
  }
  SUBCASE("fingerprint spectrum peaks at the configured period") {
    SynthConfig f = cfg;
    f.kind = SynthKind::PeriodicFingerprint;
    const std::size_t n = f.image_size;
    const std::size_t k = static_cast<std::size_t>(std::lround(static_cast<double>(n) / f.fingerprint_period));
    for (std::size_t i = 0; i < 5; ++i) {
      const auto p = synth_pair(f, i);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        // Separable naive DFT of (fake - real).
        std::vector<std::complex<double>> rows(n * n), spec(n * n);
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t u = 0; u < n; ++u) {
            std::complex<double> acc;
            for (std::size_t x = 0; x < n; ++x) {
              const double d = static_cast<double>(p.fake.at(y, x, ch)) - static_cast<double>(p.real.at(y, x, ch));
              acc += d * std::polar(1.0, -2.0 * M_PI * static_cast<double>(u * x) / static_cast<double>(n));
            }
            rows[y * n + u] = acc;
          }
        for (std::size_t v = 0; v < n; ++v)
          for (std::size_t u = 0; u < n; ++u) {
            std::complex<double> acc;
            for (std::size_t y = 0; y < n; ++y)
              acc += rows[y * n + u] * std::polar(1.0, -2.0 * M_PI * static_cast<double>(v * y) / static_cast<double>(n));
            spec[v * n + u] = acc;
          }
        std::size_t best = 1;
        for (std::size_t q = 1; q < n * n; ++q)
          if (std::abs(spec[q]) > std::abs(spec[best])) best = q;
        const std::size_t u = best % n, v = best / n;
        const bool on_axis = (v == 0 && (u == k || u == n - k)) || (u == 0 && (v == k || v == n - k));
        INFO("pair " << i << " channel " << ch << " peak (" << u << "," << v << ")");
        CHECK(on_axis);
      }
    }
  }
  SUBCASE("fakes are subtle in pixel space") {
    std::vector<Image8> reals, fakes;
    for (std::size_t i = 0; i < 100; ++i) {
      const auto p = synth_pair(cfg, i);
      CHECK(mean_abs_delta(p.real, p.fake) < 4.0 / 255.0);
      reals.push_back(p.real);
      fakes.push_back(p.fake);
    }
    CHECK(histogram_overlap(intensity_histogram(reals), intensity_histogram(fakes)) > 0.95);
  }
  SUBCASE("config validation") {
    SynthConfig bad = cfg;
    bad.fingerprint_amplitude = 10.0 / 255.0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = cfg;
    bad.patch_radius = 40;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    CHECK_THROWS_AS(parse_synth_kind("deepfake"), ConfigError);
    for (SynthKind kind : {SynthKind::BlendPatch, SynthKind::PeriodicFingerprint, SynthKind::Mixed})
      CHECK(parse_synth_kind(to_string(kind)) == kind);
  }
}

TEST_CASE("corpus generation") {
  const auto dir = scratch_dir("synth");
  SynthConfig cfg;
  cfg.kind = SynthKind::Mixed;
  cfg.count = 10;
  const auto m = synth_generate(cfg, dir);
  CHECK(m.records.size() == 20);
  CHECK(m.count(Split::Train) == 16);
  CHECK(m.count(Split::Test) == 4);
  CHECK(fs::exists(dir / "manifest.csv"));
  for (const char* sub : {"real", "fake", "masks"}) CHECK(fs::is_directory(dir / sub));
  CHECK(fs::exists(dir / "masks" / "00003.png"));

  const auto back = load_manifest(dir / "manifest.csv");
  REQUIRE(back.records.size() == m.records.size());
  const auto p = synth_pair(cfg, 3);
  CHECK(read_image(dir / "fake" / "00003.png").pixels == p.fake.pixels);

  const ImageSet test = load_images(back, Split::Test, 32);
  CHECK(test.images.shape() == Shape{4, 3, 32, 32});
  CHECK(test.labels.size() == 4);
  CHECK(std::count(test.labels.begin(), test.labels.end(), 1) == 2);

  // Regeneration is byte-identical.
  const auto dir2 = scratch_dir("synth2");
  synth_generate(cfg, dir2);
  std::ifstream a(dir / "fake" / "00007.png", std::ios::binary), b(dir2 / "fake" / "00007.png", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}
