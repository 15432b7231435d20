#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gocnet/tensor.hpp"

namespace gocnet {

/// 8-bit image with interleaved channels (HWC). channels is 1 or 3.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

/// Reads a PNG or binary/ASCII PPM (P6/P3), chosen by file signature, as RGB.
/// Throws DataError naming the path for unreadable or corrupt files.
Image8 read_image(const std::filesystem::path& path);

/// Writes a grayscale (1 channel) or RGB PNG. Output bytes are deterministic.
void write_png(const std::filesystem::path& path, const Image8& image);
void write_ppm(const std::filesystem::path& path, const Image8& image);

/// (1, C, H, W) tensor with values in [0, 1].
Tensor4<float> to_tensor(const Image8& image);
/// Inverse of to_tensor for a single image; values are rounded and clamped.
Image8 to_image8(const Tensor4<float>& image);

/// Bilinear resampling with half-pixel centres (align_corners = false) and
/// edge clamping. Same-size calls return the input unchanged.
Tensor4<float> resize_bilinear(const Tensor4<float>& image, std::size_t height, std::size_t width);

/// Decodes `path` and resizes to (height, width): (1, 3, H, W) RGB in [0, 1].
Tensor4<float> decode_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width);

}  // namespace gocnet
