#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gocnet/autograd.hpp"

namespace gocnet {

/// Trainable entries are updated by the optimizer. Fixed entries are constant
/// kernels (gradient operators). Buffers are state written by forward passes
/// (batch-norm running statistics); the optimizer never touches them.
enum class ParamKind { Trainable, Fixed, Buffer };

const char* to_string(ParamKind kind);

template <typename T>
struct ParamEntry {
  std::string name;
  Var<T> var;
  ParamKind kind = ParamKind::Trainable;
  // Adam moments; empty until the first optimizer step.
  Tensor4<T> m;
  Tensor4<T> v;

  bool trainable() const { return kind == ParamKind::Trainable; }
};

/// Named parameters in registration order. Names are unique.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Registers a new entry; throws ConfigError on a duplicate name.
  Var<T> add(const std::string& name, Tensor4<T> init, ParamKind kind) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(ParamEntry<T>{name, Var<T>::leaf(std::move(init), kind == ParamKind::Trainable),
                                     kind, {}, {}});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second];
  }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  /// Element count over entries of one kind.
  std::size_t count(ParamKind kind) const {
    std::size_t total = 0;
    for (const auto& e : entries_) {
      if (e.kind == kind) total += e.var.value().numel();
    }
    return total;
  }

  /// Element count of trainable entries whose name starts with `prefix`.
  std::size_t trainable_count(const std::string& prefix = "") const {
    std::size_t total = 0;
    for (const auto& e : entries_) {
      if (e.trainable() && e.name.starts_with(prefix)) total += e.var.value().numel();
    }
    return total;
  }

  /// Copies values (and moments) from a store with identical names and shapes,
  /// converting precision.
  template <typename U>
  void assign_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw ShapeError("assign_from: parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& src = other.entries()[i];
      auto& dst = entries_[i];
      if (src.name != dst.name || src.var.shape() != dst.var.shape()) {
        throw ShapeError("assign_from: entry mismatch at " + dst.name);
      }
      dst.var.mutable_value() = src.var.value().template cast<T>();
      dst.m = src.m.template cast<T>();
      dst.v = src.v.template cast<T>();
    }
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// He-normal initialisation: N(0, 2 / fan_in), fan_in = c*h*w of the weight shape.
/// Draws in double precision and rounds, so float and double builds from the
/// same generator state agree to float precision.
template <typename T>
Tensor4<T> he_normal(const Shape& shape, std::mt19937_64& rng);

}  // namespace gocnet
