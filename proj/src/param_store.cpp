#include "gocnet/param_store.hpp"

#include <cmath>

namespace gocnet {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::Trainable: return "trainable";
    case ParamKind::Fixed: return "fixed";
    case ParamKind::Buffer: return "buffer";
  }
  return "?";
}

template <typename T>
Tensor4<T> he_normal(const Shape& shape, std::mt19937_64& rng) {
  const std::size_t fan_in = shape.c * shape.h * shape.w;
  if (fan_in == 0) throw ShapeError("he_normal: zero fan-in for shape " + shape.str());
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor4<T> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template Tensor4<float> he_normal(const Shape&, std::mt19937_64&);
template Tensor4<double> he_normal(const Shape&, std::mt19937_64&);

}  // namespace gocnet
