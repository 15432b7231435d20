#pragma once

#include <stdexcept>
#include <string>

namespace gocnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or run configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset input (manifest rows, labels, image files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on a non-scalar or metrics on an empty set.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gocnet
