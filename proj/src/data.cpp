#include "gocnet/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace gocnet {

namespace fs = std::filesystem;

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(s) + "' (expected train or test)");
}

fs::path DatasetManifest::resolve(const ManifestRecord& r) const {
  const fs::path p(r.path);
  return p.is_absolute() ? p : root / p;
}

std::vector<ManifestRecord> DatasetManifest::select(Split s) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [s](const auto& r) { return r.split == s; }));
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cols.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cols;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv, bool check_paths) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open manifest: " + csv.string());
  DatasetManifest m;
  m.root = csv.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cols = split_csv(line);
    auto fail = [&](const std::string& what) {
      throw DataError(csv.string() + " line " + std::to_string(lineno) + ": " + what);
    };
    if (cols.size() != 3) fail("expected 3 columns (path,label,split), got " + std::to_string(cols.size()));
    if (lineno == 1 && cols[0] == "path" && cols[1] == "label" && cols[2] == "split") continue;
    ManifestRecord r;
    r.path = cols[0];
    if (r.path.empty()) fail("empty path");
    if (cols[1] == "0") {
      r.label = 0;
    } else if (cols[1] == "1") {
      r.label = 1;
    } else {
      fail("bad label '" + cols[1] + "' (expected 0 or 1)");
    }
    if (cols[2] == "train") {
      r.split = Split::Train;
    } else if (cols[2] == "test") {
      r.split = Split::Test;
    } else {
      fail("bad split '" + cols[2] + "' (expected train or test)");
    }
    if (check_paths && !fs::exists(m.resolve(r))) fail("missing file " + m.resolve(r).string());
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& csv, const DatasetManifest& manifest) {
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write manifest " + csv.string());
  out << "path,label,split\n";
  for (const auto& r : manifest.records) out << r.path << ',' << r.label << ',' << to_string(r.split) << '\n';
  if (!out) throw IoError("failed writing manifest " + csv.string());
}

ImageSet load_images(const DatasetManifest& manifest, Split split, std::size_t image_size) {
  const auto records = manifest.select(split);
  ImageSet set;
  set.images = Tensor4<float>(Shape{records.size(), 3, image_size, image_size});
  const std::size_t stride = 3 * image_size * image_size;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto img = decode_and_resize(manifest.resolve(records[i]), image_size, image_size);
    std::copy(img.ptr(), img.ptr() + stride, set.images.ptr() + i * stride);
    set.labels.push_back(records[i].label);
    set.paths.push_back(records[i].path);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Augmentation

void validate(const AugmentConfig& cfg) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must be in [0,1]");
  };
  prob(cfg.hflip_prob, "hflip_prob");
  prob(cfg.perspective_prob, "perspective_prob");
  if (!(cfg.perspective_scale >= 0.0 && cfg.perspective_scale <= 1.0)) {
    throw ConfigError("augment.perspective_scale must be in [0,1]");
  }
  if (!(cfg.rotation_degrees >= 0.0 && cfg.rotation_degrees <= 180.0)) {
    throw ConfigError("augment.rotation_degrees must be in [0,180]");
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(cfg.stddev[c] > 0.0) || !std::isfinite(cfg.stddev[c])) throw ConfigError("augment.std must be > 0");
    if (!std::isfinite(cfg.mean[c])) throw ConfigError("augment.mean must be finite");
  }
}

Tensor4<float> hflip(const Tensor4<float>& batch) {
  const Shape& s = batch.shape();
  Tensor4<float> out(s);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < s.h; ++y) {
      const float* src = batch.ptr() + nc * s.plane() + y * s.w;
      float* dst = out.ptr() + nc * s.plane() + y * s.w;
      for (std::size_t x = 0; x < s.w; ++x) dst[x] = src[s.w - 1 - x];
    }
  return out;
}

namespace {

// Bilinear sample of one plane with replicated borders.
float sample(const float* plane, std::size_t h, std::size_t w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(sy);
  const auto x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const float wy = static_cast<float>(sy - static_cast<double>(y0));
  const float wx = static_cast<float>(sx - static_cast<double>(x0));
  const float top = plane[y0 * w + x0] + wx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
  const float bot = plane[y1 * w + x0] + wx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
  return top + wy * (bot - top);
}

void warp_sample(const Tensor4<float>& in, Tensor4<float>& out, std::size_t n, const std::array<double, 9>& m) {
  const Shape& s = in.shape();
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double X = static_cast<double>(x);
      const double Y = static_cast<double>(y);
      const double d = m[6] * X + m[7] * Y + m[8];
      const double sx = (m[0] * X + m[1] * Y + m[2]) / d;
      const double sy = (m[3] * X + m[4] * Y + m[5]) / d;
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t base = (n * s.c + c) * s.plane();
        out[base + y * s.w + x] = sample(in.ptr() + base, s.h, s.w, sy, sx);
      }
    }
}

std::array<double, 9> rotation_matrix(const Shape& s, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double cx = (static_cast<double>(s.w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(s.h) - 1.0) / 2.0;
  const double c = std::cos(t);
  const double si = std::sin(t);
  // Output pixel p maps to source R(-t)(p - centre) + centre.
  return {c, si, cx - c * cx - si * cy, -si, c, cy + si * cx - c * cy, 0.0, 0.0, 1.0};
}

}  // namespace

Tensor4<float> warp(const Tensor4<float>& batch, const std::array<double, 9>& out_to_src) {
  Tensor4<float> out(batch.shape());
  for (std::size_t n = 0; n < batch.shape().n; ++n) warp_sample(batch, out, n, out_to_src);
  return out;
}

Tensor4<float> rotate(const Tensor4<float>& batch, double degrees) {
  return warp(batch, rotation_matrix(batch.shape(), degrees));
}

std::array<double, 9> homography(const std::array<std::array<double, 2>, 4>& from,
                                 const std::array<std::array<double, 2>, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  return {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0};
}

Tensor4<float> normalize(const Tensor4<float>& batch, const AugmentConfig& cfg) {
  if (!cfg.normalize) return batch;
  const Shape& s = batch.shape();
  if (s.c != 3) throw ShapeError("normalize: expected 3 channels, got " + s.str());
  Tensor4<float> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      const float mean = static_cast<float>(cfg.mean[c]);
      const float sd = static_cast<float>(cfg.stddev[c]);
      const std::size_t base = (n * 3 + c) * s.plane();
      for (std::size_t p = 0; p < s.plane(); ++p) out[base + p] = (batch[base + p] - mean) / sd;
    }
  return out;
}

Tensor4<float> augment(const Tensor4<float>& batch, const AugmentConfig& cfg, Rng& rng) {
  validate(cfg);
  const Shape& s = batch.shape();
  Tensor4<float> cur = batch;
  Tensor4<float> tmp(s);
  const std::size_t per = s.c * s.plane();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t n = 0; n < s.n; ++n) {
    if (cfg.hflip && unit(rng) < cfg.hflip_prob) {
      float* img = cur.ptr() + n * per;
      for (std::size_t r = 0; r < s.c * s.h; ++r) std::reverse(img + r * s.w, img + (r + 1) * s.w);
    }
    if (cfg.rotation && cfg.rotation_degrees > 0.0) {
      const double deg = (2.0 * unit(rng) - 1.0) * cfg.rotation_degrees;
      warp_sample(cur, tmp, n, rotation_matrix(s, deg));
      std::copy(tmp.ptr() + n * per, tmp.ptr() + (n + 1) * per, cur.ptr() + n * per);
    }
    if (cfg.perspective && unit(rng) < cfg.perspective_prob) {
      const double W = static_cast<double>(s.w) - 1.0;
      const double H = static_cast<double>(s.h) - 1.0;
      const double dx = cfg.perspective_scale * W / 2.0;
      const double dy = cfg.perspective_scale * H / 2.0;
      std::array<std::array<double, 2>, 4> corners{{{0, 0}, {W, 0}, {W, H}, {0, H}}};
      std::array<std::array<double, 2>, 4> moved{};
      const double sx[4] = {1, -1, -1, 1};
      const double sy[4] = {1, 1, -1, -1};
      for (int k = 0; k < 4; ++k) {
        moved[k][0] = corners[k][0] + sx[k] * unit(rng) * dx;
        moved[k][1] = corners[k][1] + sy[k] * unit(rng) * dy;
      }
      // Output corners sit at `moved`; sample the source at the original corners.
      warp_sample(cur, tmp, n, homography(moved, corners));
      std::copy(tmp.ptr() + n * per, tmp.ptr() + (n + 1) * per, cur.ptr() + n * per);
    }
  }
  return normalize(cur, cfg);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

std::string_view to_string(SynthKind k) {
  switch (k) {
    case SynthKind::BlendPatch: return "blend-patch";
    case SynthKind::PeriodicFingerprint: return "periodic-fingerprint";
    case SynthKind::Mixed: return "mixed";
  }
  return "?";
}

SynthKind parse_synth_kind(std::string_view s) {
  if (s == "blend-patch") return SynthKind::BlendPatch;
  if (s == "periodic-fingerprint") return SynthKind::PeriodicFingerprint;
  if (s == "mixed") return SynthKind::Mixed;
  throw ConfigError("unknown synth kind '" + std::string(s) +
                    "' (valid: blend-patch, periodic-fingerprint, mixed)");
}

void validate(const SynthConfig& cfg) {
  if (cfg.image_size < 16) throw ConfigError("synth.image_size must be >= 16");
  if (cfg.count == 0) throw ConfigError("synth.count must be >= 1");
  if (!(cfg.train_fraction >= 0.0 && cfg.train_fraction <= 1.0)) {
    throw ConfigError("synth.train_fraction must be in [0,1]");
  }
  if (!(cfg.blend_sigma > 0.0 && cfg.blend_sigma <= 4.0)) throw ConfigError("synth.blend_sigma must be in (0,4]");
  const double margin = 3.0 * cfg.blend_sigma + 2.0;
  if (!(cfg.patch_radius >= 2.0) || 2.0 * (cfg.patch_radius + margin) >= static_cast<double>(cfg.image_size)) {
    throw ConfigError("synth.patch_radius must be >= 2 and the patch must fit inside the image");
  }
  if (!(cfg.patch_delta > 0.0 && cfg.patch_delta <= 64.0 / 255.0)) {
    throw ConfigError("synth.patch_delta must be in (0, 64/255]");
  }
  // Worst case |pattern| is amplitude, so this bound alone keeps the mean delta under 4/255.
  if (!(cfg.fingerprint_amplitude > 0.0 && cfg.fingerprint_amplitude < 8.0 / 255.0)) {
    throw ConfigError("synth.fingerprint_amplitude must be in (0, 8/255)");
  }
  if (!(cfg.fingerprint_period >= 2.0 && cfg.fingerprint_period <= static_cast<double>(cfg.image_size) / 2.0)) {
    throw ConfigError("synth.fingerprint_period must be in [2, image_size/2]");
  }
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise in [-1,1] on a size x size grid.
std::vector<double> value_noise(std::size_t size, double cell, Rng& rng) {
  const auto g = static_cast<std::size_t>(std::ceil(static_cast<double>(size) / cell)) + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> grid(g * g);
  for (auto& v : grid) v = u(rng);
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const auto iy = static_cast<std::size_t>(fy);
    const double ty = smoothstep(fy - static_cast<double>(iy));
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const auto ix = static_cast<std::size_t>(fx);
      const double tx = smoothstep(fx - static_cast<double>(ix));
      const double a = grid[iy * g + ix], b = grid[iy * g + ix + 1];
      const double c = grid[(iy + 1) * g + ix], d = grid[(iy + 1) * g + ix + 1];
      const double top = a + tx * (b - a);
      const double bot = c + tx * (d - c);
      out[y * size + x] = top + ty * (bot - top);
    }
  }
  return out;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

Image8 quantize_image(const std::vector<double>& rgb, std::size_t size) {
  Image8 img{size, size, 3, std::vector<std::uint8_t>(size * size * 3)};
  for (std::size_t p = 0; p < size * size; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = quantize(rgb[c * size * size + p]);
  return img;
}

}  // namespace

Tensor4<float> smooth_texture(std::size_t size, Rng& rng) {
  std::uniform_real_distribution<double> base(0.3, 0.7);
  std::uniform_real_distribution<double> tint(-0.08, 0.08);
  const double b = base(rng);
  const std::array<double, 3> tints{tint(rng), tint(rng), tint(rng)};
  std::vector<double> lum(size * size, b);
  const double cells[3] = {32.0, 16.0, 8.0};
  const double amps[3] = {0.12, 0.05, 0.02};
  for (int o = 0; o < 3; ++o) {
    const auto n = value_noise(size, cells[o], rng);
    for (std::size_t p = 0; p < lum.size(); ++p) lum[p] += amps[o] * n[p];
  }
  Tensor4<float> out(Shape{1, 3, size, size});
  for (std::size_t c = 0; c < 3; ++c) {
    const auto chroma = value_noise(size, 16.0, rng);
    for (std::size_t p = 0; p < lum.size(); ++p) {
      out[c * lum.size() + p] = static_cast<float>(std::clamp(lum[p] + tints[c] + 0.03 * chroma[p], 0.02, 0.98));
    }
  }
  return out;
}

SynthPair synth_pair(const SynthConfig& cfg, std::size_t index) {
  validate(cfg);
  Rng rng = make_rng(substream_seed(cfg.seed, "data"), "synth." + std::to_string(index));
  const std::size_t S = cfg.image_size;
  const std::size_t P = S * S;
  const Tensor4<float> tex = smooth_texture(S, rng);
  std::vector<double> real(tex.vec().begin(), tex.vec().end());

  SynthPair pair;
  pair.kind = cfg.kind;
  if (cfg.kind == SynthKind::Mixed) {
    pair.kind = index % 2 == 0 ? SynthKind::BlendPatch : SynthKind::PeriodicFingerprint;
  }
  pair.real = quantize_image(real, S);
  pair.mask = Image8{S, S, 1, std::vector<std::uint8_t>(P, kMaskClean)};
  std::vector<double> fake = real;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (pair.kind == SynthKind::BlendPatch) {
    const double reach = 3.0 * cfg.blend_sigma + 0.5;
    const double lo = cfg.patch_radius + reach + 1.0;
    const double hi = static_cast<double>(S) - 1.0 - lo;
    const double cx = lo + unit(rng) * (hi - lo);
    const double cy = lo + unit(rng) * (hi - lo);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    std::array<double, 3> delta{};
    for (auto& d : delta) d = sign * cfg.patch_delta * (0.6 + 0.4 * unit(rng));
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double r = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
        const double off = r - cfg.patch_radius;
        const std::size_t p = y * S + x;
        if (off >= reach) continue;
        const double m = 0.5 * std::erfc(off / (std::numbers::sqrt2 * cfg.blend_sigma));
        for (std::size_t c = 0; c < 3; ++c) fake[c * P + p] += m * delta[c];
        pair.mask.pixels[p] = off <= -reach ? kMaskInterior : kMaskArtifact;
      }
  } else {
    const double phx = unit(rng) * 2.0 * std::numbers::pi;
    const double phy = unit(rng) * 2.0 * std::numbers::pi;
    const double w = 2.0 * std::numbers::pi / cfg.fingerprint_period;
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double v = cfg.fingerprint_amplitude * 0.5 *
                         (std::cos(w * static_cast<double>(x) + phx) + std::cos(w * static_cast<double>(y) + phy));
        for (std::size_t c = 0; c < 3; ++c) fake[c * P + y * S + x] += v;
      }
    std::fill(pair.mask.pixels.begin(), pair.mask.pixels.end(), kMaskArtifact);
  }
  pair.fake = quantize_image(fake, S);
  return pair;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  validate(cfg);
  std::error_code ec;
  for (const char* sub : {"real", "fake", "masks"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  const std::size_t width = std::max<std::size_t>(5, std::to_string(cfg.count - 1).size());
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.count)));
  DatasetManifest m;
  m.root = out_dir;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const SynthPair pair = synth_pair(cfg, i);
    std::string id = std::to_string(i);
    id.insert(0, width - id.size(), '0');
    const std::string name = id + ".png";
    write_png(out_dir / "real" / name, pair.real);
    write_png(out_dir / "fake" / name, pair.fake);
    write_png(out_dir / "masks" / name, pair.mask);
    const Split split = i < n_train ? Split::Train : Split::Test;
    m.records.push_back({"real/" + name, 0, split});
    m.records.push_back({"fake/" + name, 1, split});
  }
  write_manifest(out_dir / "manifest.csv", m);
  return m;
}

double mean_abs_delta(const Image8& a, const Image8& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw ShapeError("mean_abs_delta: image geometry differs");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) acc += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
  return acc / (255.0 * static_cast<double>(a.pixels.size()));
}

namespace {

template <typename F>
double masked_mean(const Image8& image, const Image8& mask, std::uint8_t value, KernelName op, F f) {
  if (mask.channels != 1 || mask.width != image.width || mask.height != image.height) {
    throw ShapeError("mask geometry does not match image");
  }
  TPConfig cfg;
  cfg.op = op;
  const Tensor4<float> r = tp_apply(to_tensor(image), cfg);
  const std::size_t P = image.width * image.height;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < P; ++p) {
    if (mask.pixels[p] != value) continue;
    for (std::size_t c = 0; c < image.channels; ++c) acc += f(static_cast<double>(r[c * P + p]));
    count += image.channels;
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

}  // namespace

double masked_energy(const Image8& image, const Image8& mask, std::uint8_t value, KernelName op) {
  return masked_mean(image, mask, value, op, [](double v) { return v * v; });
}

double masked_magnitude(const Image8& image, const Image8& mask, std::uint8_t value, KernelName op) {
  return masked_mean(image, mask, value, op, [](double v) { return std::abs(v); });
}

std::array<double, 256> intensity_histogram(const std::vector<Image8>& images) {
  std::array<double, 256> h{};
  double total = 0.0;
  for (const auto& img : images) {
    for (auto v : img.pixels) h[v] += 1.0;
    total += static_cast<double>(img.pixels.size());
  }
  if (total > 0.0)
    for (auto& v : h) v /= total;
  return h;
}

double histogram_overlap(const std::array<double, 256>& a, const std::array<double, 256>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 256; ++i) s += std::min(a[i], b[i]);
  return s;
}

}  // namespace gocnet
