#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gocnet/network.hpp"

namespace gocnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Payload type of one checkpoint entry. F32 holds tensors; the others carry
/// counters, RNG engine states and the model description.
enum class DType : std::uint8_t { F32 = 0, I64 = 1, Bytes = 2, F64 = 3 };

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian
};

/// Named entries in insertion order. File layout: "GOCK", u32 version,
/// u32 entry count, then per entry u32 name length, name bytes, u8 dtype,
/// u32 rank, rank x u32 dims, payload.
class Checkpoint {
 public:
  void set_tensor(const std::string& name, const Tensor4<float>& t);
  void set_i64(const std::string& name, const std::vector<std::int64_t>& values);
  void set_f64(const std::string& name, const std::vector<double>& values);
  void set_bytes(const std::string& name, const std::string& bytes);

  bool has(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  Tensor4<float> tensor(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;
  std::int64_t scalar_i64(const std::string& name) const;
  std::vector<double> f64(const std::string& name) const;
  std::string bytes(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

 private:
  CheckpointEntry& upsert(const std::string& name);
  std::vector<CheckpointEntry> entries_;
};

/// Writes through a temporary file and rename, so an existing checkpoint is
/// never left half-written.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError for unreadable files and DataError for malformed contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& json);

/// Stores the spec plus every parameter value ("param.<name>") and Adam moments
/// ("adam.m.<name>", "adam.v.<name>") when present.
void store_model(Checkpoint& ckpt, const Model<float>& model);
/// Rebuilds the model from the stored spec and restores all values.
Model<float> restore_model(const Checkpoint& ckpt);

}  // namespace gocnet
