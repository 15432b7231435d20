#include "gocnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gocnet {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image8 read_png(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError("corrupt PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out{img.width, img.height, 3, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(img))};
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&img, &black, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("corrupt PNG " + path.string() + ": " + msg);
  }
  return out;
}

Image8 read_ppm(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 2;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok += static_cast<char>(bytes[pos++]);
    if (tok.empty()) throw DataError("truncated PPM header: " + path.string());
    return tok;
  };
  auto number = [&]() -> std::size_t {
    const std::string tok = next_token();
    if (!std::all_of(tok.begin(), tok.end(), ::isdigit)) throw DataError("corrupt PPM header: " + path.string());
    return std::stoul(tok);
  };
  const bool binary = bytes[1] == '6';
  const std::size_t w = number();
  const std::size_t h = number();
  const std::size_t maxval = number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw DataError("unsupported PPM geometry or maxval in " + path.string());
  }
  Image8 out{w, h, 3, std::vector<std::uint8_t>(w * h * 3)};
  auto rescale = [&](std::size_t v) {
    return static_cast<std::uint8_t>(std::lround(static_cast<double>(std::min(v, maxval)) * 255.0 / maxval));
  };
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + out.pixels.size()) throw DataError("truncated PPM data: " + path.string());
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = rescale(bytes[pos + i]);
  } else {
    for (auto& px : out.pixels) px = rescale(number());
  }
  return out;
}

}  // namespace

Image8 read_image(const fs::path& path) {
  const auto bytes = read_bytes(path);
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return read_png(path, bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) return read_ppm(path, bytes);
  throw DataError("unsupported or corrupt image file: " + path.string());
}

void write_png(const fs::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw UsageError("write_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_ppm(const fs::path& path, const Image8& image) {
  if (image.channels != 3) throw UsageError("write_ppm: image must be RGB");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

Tensor4<float> to_tensor(const Image8& image) {
  const std::size_t c = image.channels;
  Tensor4<float> t(Shape{1, c, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t k = 0; k < c; ++k) t.at(0, k, y, x) = static_cast<float>(image.at(y, x, k)) / 255.0f;
  return t;
}

Image8 to_image8(const Tensor4<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1) throw ShapeError("to_image8: expected a single image, got " + s.str());
  Image8 out{s.w, s.h, s.c, std::vector<std::uint8_t>(s.numel())};
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t k = 0; k < s.c; ++k) {
        const float v = std::round(image.at(0, k, y, x) * 255.0f);
        out.pixels[(y * s.w + x) * s.c + k] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
  return out;
}

Tensor4<float> resize_bilinear(const Tensor4<float>& image, std::size_t height, std::size_t width) {
  const Shape& s = image.shape();
  if (height == 0 || width == 0) throw ShapeError("resize_bilinear: target size must be positive");
  if (s.h == height && s.w == width) return image;
  Tensor4<float> out(Shape{s.n, s.c, height, width});
  const double sy = static_cast<double>(s.h) / static_cast<double>(height);
  const double sx = static_cast<double>(s.w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, s.h - 1);
    const float wy = static_cast<float>(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, s.w - 1);
      const float wx = static_cast<float>(fx - static_cast<double>(x0));
      for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
        const float* p = image.ptr() + nc * s.plane();
        const float a = p[y0 * s.w + x0];
        const float b = p[y0 * s.w + x1];
        const float c = p[y1 * s.w + x0];
        const float d = p[y1 * s.w + x1];
        // a + w*(b-a) form keeps constant regions exact.
        const float top = a + wx * (b - a);
        const float bottom = c + wx * (d - c);
        out[nc * height * width + y * width + x] = top + wy * (bottom - top);
      }
    }
  }
  return out;
}

Tensor4<float> decode_and_resize(const fs::path& path, std::size_t height, std::size_t width) {
  return resize_bilinear(to_tensor(read_image(path)), height, width);
}

}  // namespace gocnet
