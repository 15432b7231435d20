#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace gocnet {

using Rng = std::mt19937_64;

/// Seed for a named sub-stream ("init", "data", "augment", "shuffle") of a run seed.
/// Sub-streams are independent so each component can be reproduced in isolation.
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name);

inline Rng make_rng(std::uint64_t seed, std::string_view name) { return Rng(substream_seed(seed, name)); }

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace gocnet
