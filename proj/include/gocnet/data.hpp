#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gocnet/gradop.hpp"
#include "gocnet/image_io.hpp"
#include "gocnet/rng.hpp"

namespace gocnet {

enum class Split { Train, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestRecord {
  std::string path;  // as written; relative paths resolve against the manifest's directory
  int label = 0;     // 0 real, 1 fake
  Split split = Split::Train;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const;
  std::vector<ManifestRecord> select(Split s) const;
  std::size_t count(Split s) const;
};

/// Parses a `path,label,split` CSV (header row optional). Errors are DataError
/// and name the 1-based line. With check_paths, every image must exist.
DatasetManifest load_manifest(const std::filesystem::path& csv, bool check_paths = true);
void write_manifest(const std::filesystem::path& csv, const DatasetManifest& manifest);

/// Decoded, resized images held in memory: (N, 3, S, S) plus labels.
struct ImageSet {
  Tensor4<float> images;
  std::vector<int> labels;
  std::vector<std::string> paths;
};

ImageSet load_images(const DatasetManifest& manifest, Split split, std::size_t image_size);

struct AugmentConfig {
  bool hflip = true;
  double hflip_prob = 0.5;
  bool rotation = true;
  double rotation_degrees = 10.0;
  bool perspective = true;
  double perspective_scale = 0.2;
  double perspective_prob = 0.5;
  bool normalize = true;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.5, 0.5, 0.5};
};

void validate(const AugmentConfig& cfg);

/// Training-time pipeline: flip, rotation, perspective, then normalisation.
/// Geometric warps use bilinear sampling with replicated borders.
Tensor4<float> augment(const Tensor4<float>& batch, const AugmentConfig& cfg, Rng& rng);

/// Per-channel (x - mean) / std when cfg.normalize is set; identity otherwise.
Tensor4<float> normalize(const Tensor4<float>& batch, const AugmentConfig& cfg);

/// Horizontal flip of every image in the batch.
Tensor4<float> hflip(const Tensor4<float>& batch);
/// Rotation by `degrees` about the image centre.
Tensor4<float> rotate(const Tensor4<float>& batch, double degrees);
/// Applies the projective map taking output pixel coords to source coords.
Tensor4<float> warp(const Tensor4<float>& batch, const std::array<double, 9>& out_to_src);
/// Homography mapping the four `from` corners onto `to` (row-major 3x3, h22 = 1).
std::array<double, 9> homography(const std::array<std::array<double, 2>, 4>& from,
                                 const std::array<std::array<double, 2>, 4>& to);

enum class SynthKind { BlendPatch, PeriodicFingerprint, Mixed };

std::string_view to_string(SynthKind k);
SynthKind parse_synth_kind(std::string_view s);

struct SynthConfig {
  SynthKind kind = SynthKind::BlendPatch;
  std::size_t image_size = 64;
  double patch_radius = 12.0;
  double blend_sigma = 0.6;
  double patch_delta = 24.0 / 255.0;  // colour shift inside the pasted region
  double fingerprint_amplitude = 6.0 / 255.0;
  double fingerprint_period = 4.0;
  std::size_t count = 500;        // real/fake pairs
  double train_fraction = 0.8;    // leading pairs assigned to the train split
  std::uint64_t seed = 7;
};

void validate(const SynthConfig& cfg);

/// Mask values written alongside each fake.
inline constexpr std::uint8_t kMaskClean = 0;
inline constexpr std::uint8_t kMaskInterior = 128;
inline constexpr std::uint8_t kMaskArtifact = 255;

/// One generated pair, all 8-bit.
struct SynthPair {
  Image8 real;
  Image8 fake;
  Image8 mask;  // single channel
  SynthKind kind = SynthKind::BlendPatch;
};

/// Deterministic pair `index` of the corpus defined by cfg.
SynthPair synth_pair(const SynthConfig& cfg, std::size_t index);

/// Writes real/, fake/, masks/ PNGs and manifest.csv under out_dir.
DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Smooth, texture-like RGB image in [0,1] from value noise.
Tensor4<float> smooth_texture(std::size_t size, Rng& rng);

/// Mean absolute per-pixel difference of two equally sized 8-bit images, in [0,1] units.
double mean_abs_delta(const Image8& a, const Image8& b);

/// Mean of squared operator response over the pixels where mask == value.
double masked_energy(const Image8& image, const Image8& mask, std::uint8_t value, KernelName op);
/// Mean of |operator response| over the pixels where mask == value.
double masked_magnitude(const Image8& image, const Image8& mask, std::uint8_t value, KernelName op);

/// 256-bin intensity histogram over all channels, normalised to sum 1.
std::array<double, 256> intensity_histogram(const std::vector<Image8>& images);
/// Sum of bin-wise minima of two normalised histograms, in [0,1].
double histogram_overlap(const std::array<double, 256>& a, const std::array<double, 256>& b);

}  // namespace gocnet
