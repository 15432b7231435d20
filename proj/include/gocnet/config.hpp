#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gocnet/data.hpp"
#include "gocnet/network.hpp"
#include "gocnet/train.hpp"

namespace gocnet {

/// Everything a command needs, with a default for every key. The single run
/// seed feeds model initialisation, data order, augmentation and synthesis.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/default";
  std::string manifest = "data/synth/manifest.csv";
  ModelSpec model;
  TrainConfig train;
  AugmentConfig augment;
  SynthConfig synth;
};

/// Sets one `section.key` from its text form. Unknown keys and unparsable
/// values throw ConfigError naming the key.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every accepted `section.key`, in echo order.
std::vector<std::string> config_keys();

/// Parses an INI file ([run] [data] [model] [tp] [mta] [train] [augment] [synth]).
/// `model.backbone` is applied first so it can reset the stage layout that
/// later keys refine.
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies `section.key=value` overrides (flags win over the file).
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments);

/// Propagates the run seed and validates every part; throws ConfigError.
void finalize(RunConfig& cfg);

/// The fully resolved configuration as INI text; loading it reproduces cfg.
std::string to_ini(const RunConfig& cfg);

/// Relative output paths are placed under $GOCNET_OUT when it is set.
std::filesystem::path output_path(const std::string& path);

}  // namespace gocnet
