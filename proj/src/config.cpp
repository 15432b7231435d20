#include "gocnet/config.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace gocnet {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

double to_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '[' || ch == ']') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename F>
auto rethrow_as_config(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
  // Small helpers keep each row to one line.
  auto sz = [](std::string name, std::function<std::size_t&(RunConfig&)> ref) {
    return Key{name, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
               [ref, name](RunConfig& c, const std::string& v) { ref(c) = static_cast<std::size_t>(to_u64(name, v)); }};
  };
  auto dbl = [](std::string name, std::function<double&(RunConfig&)> ref) {
    return Key{name, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
               [ref, name](RunConfig& c, const std::string& v) { ref(c) = to_double(name, v); }};
  };
  auto flag = [](std::string name, std::function<bool&(RunConfig&)> ref) {
    return Key{name, [ref](const RunConfig& c) { return fmt(ref(const_cast<RunConfig&>(c))); },
               [ref, name](RunConfig& c, const std::string& v) { ref(c) = to_bool(name, v); }};
  };
  auto triple = [](std::string name, std::function<std::array<double, 3>&(RunConfig&)> ref) {
    return Key{name,
               [ref](const RunConfig& c) {
                 const auto& a = ref(const_cast<RunConfig&>(c));
                 return fmt(a[0]) + "," + fmt(a[1]) + "," + fmt(a[2]);
               },
               [ref, name](RunConfig& c, const std::string& v) {
                 const auto parts = split_list(v);
                 if (parts.size() != 3) throw ConfigError(name + ": expected three comma-separated numbers");
                 for (std::size_t i = 0; i < 3; ++i) ref(c)[i] = to_double(name, parts[i]);
               }};
  };

  static const std::vector<Key> table = {
      Key{"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& v) { c.seed = to_u64("run.seed", v); }},
      Key{"run.out_dir", [](const RunConfig& c) { return c.out_dir; },
          [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      Key{"data.manifest", [](const RunConfig& c) { return c.manifest; },
          [](RunConfig& c, const std::string& v) { c.manifest = v; }},
      Key{"model.variant", [](const RunConfig& c) { return std::string(to_string(c.model.variant)); },
          [](RunConfig& c, const std::string& v) {
            c.model.variant = rethrow_as_config("model.variant", [&] { return parse_variant(v); });
          }},
      Key{"model.backbone", [](const RunConfig& c) { return std::string(to_string(c.model.backbone.kind)); },
          [](RunConfig& c, const std::string& v) {
            const BackboneKind k = rethrow_as_config("model.backbone", [&] { return parse_backbone(v); });
            c.model.backbone = k == BackboneKind::ResNet18 ? BackboneConfig::resnet18() : BackboneConfig{};
          }},
      Key{"model.stage_channels",
          [](const RunConfig& c) {
            std::string s;
            for (auto v : c.model.backbone.stage_channels) s += (s.empty() ? "" : ",") + std::to_string(v);
            return s;
          },
          [](RunConfig& c, const std::string& v) {
            c.model.backbone.stage_channels.clear();
            for (const auto& p : split_list(v)) {
              c.model.backbone.stage_channels.push_back(static_cast<std::size_t>(to_u64("model.stage_channels", p)));
            }
          }},
      sz("model.blocks_per_stage", [](RunConfig& c) -> std::size_t& { return c.model.backbone.blocks_per_stage; }),
      sz("model.image_size", [](RunConfig& c) -> std::size_t& { return c.model.backbone.image_size; }),
      flag("model.dual_tp", [](RunConfig& c) -> bool& { return c.model.dual_tp; }),
      flag("model.dual_mta", [](RunConfig& c) -> bool& { return c.model.dual_mta; }),
      Key{"tp.operator", [](const RunConfig& c) { return std::string(kernel_id(c.model.tp.op)); },
          [](RunConfig& c, const std::string& v) {
            c.model.tp.op = rethrow_as_config("tp.operator", [&] { return parse_kernel_name(v); });
          }},
      Key{"tp.mode", [](const RunConfig& c) { return std::string(to_string(c.model.tp.mode)); },
          [](RunConfig& c, const std::string& v) {
            c.model.tp.mode = rethrow_as_config("tp.mode", [&] { return parse_tp_mode(v); });
          }},
      sz("mta.reduction", [](RunConfig& c) -> std::size_t& { return c.model.mta.reduction; }),
      Key{"mta.operator", [](const RunConfig& c) { return std::string(kernel_id(c.model.mta.op)); },
          [](RunConfig& c, const std::string& v) {
            c.model.mta.op = rethrow_as_config("mta.operator", [&] { return parse_kernel_name(v); });
          }},
      Key{"mta.gate_mode", [](const RunConfig& c) { return std::string(to_string(c.model.mta.gate_mode)); },
          [](RunConfig& c, const std::string& v) {
            c.model.mta.gate_mode = rethrow_as_config("mta.gate_mode", [&] { return parse_tp_mode(v); });
          }},
      Key{"mta.fusion", [](const RunConfig& c) { return std::string(to_string(c.model.mta.fusion)); },
          [](RunConfig& c, const std::string& v) {
            c.model.mta.fusion = rethrow_as_config("mta.fusion", [&] { return parse_fusion_mode(v); });
          }},
      dbl("mta.alpha_init", [](RunConfig& c) -> double& { return c.model.mta.alpha_init; }),
      dbl("train.lr0", [](RunConfig& c) -> double& { return c.train.lr0; }),
      dbl("train.gamma", [](RunConfig& c) -> double& { return c.train.gamma; }),
      dbl("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; }),
      dbl("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; }),
      dbl("train.epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }),
      sz("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
      sz("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
      sz("train.checkpoint_every", [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every; }),
      sz("train.eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; }),
      sz("train.max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; }),
      flag("augment.hflip", [](RunConfig& c) -> bool& { return c.augment.hflip; }),
      dbl("augment.hflip_prob", [](RunConfig& c) -> double& { return c.augment.hflip_prob; }),
      flag("augment.rotation", [](RunConfig& c) -> bool& { return c.augment.rotation; }),
      dbl("augment.rotation_degrees", [](RunConfig& c) -> double& { return c.augment.rotation_degrees; }),
      flag("augment.perspective", [](RunConfig& c) -> bool& { return c.augment.perspective; }),
      dbl("augment.perspective_scale", [](RunConfig& c) -> double& { return c.augment.perspective_scale; }),
      dbl("augment.perspective_prob", [](RunConfig& c) -> double& { return c.augment.perspective_prob; }),
      flag("augment.normalize", [](RunConfig& c) -> bool& { return c.augment.normalize; }),
      triple("augment.mean", [](RunConfig& c) -> std::array<double, 3>& { return c.augment.mean; }),
      triple("augment.std", [](RunConfig& c) -> std::array<double, 3>& { return c.augment.stddev; }),
      Key{"synth.kind", [](const RunConfig& c) { return std::string(to_string(c.synth.kind)); },
          [](RunConfig& c, const std::string& v) { c.synth.kind = parse_synth_kind(v); }},
      sz("synth.image_size", [](RunConfig& c) -> std::size_t& { return c.synth.image_size; }),
      sz("synth.count", [](RunConfig& c) -> std::size_t& { return c.synth.count; }),
      dbl("synth.train_fraction", [](RunConfig& c) -> double& { return c.synth.train_fraction; }),
      dbl("synth.patch_radius", [](RunConfig& c) -> double& { return c.synth.patch_radius; }),
      dbl("synth.blend_sigma", [](RunConfig& c) -> double& { return c.synth.blend_sigma; }),
      dbl("synth.patch_delta", [](RunConfig& c) -> double& { return c.synth.patch_delta; }),
      dbl("synth.fingerprint_amplitude", [](RunConfig& c) -> double& { return c.synth.fingerprint_amplitude; }),
      dbl("synth.fingerprint_period", [](RunConfig& c) -> double& { return c.synth.fingerprint_period; }),
  };
  return table;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError("malformed config file " + path.string() + ": " + e.what());
  }
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& item : items) {
    // The parser emits bare section markers ("++" / "--") around each section.
    if (item.name == "++" || item.name == "--") continue;
    if (item.parents.empty()) {
      throw ConfigError(path.string() + ": key '" + item.name + "' must be inside a [section]");
    }
    std::string value;
    for (const auto& in_value : item.inputs) value += (value.empty() ? "" : ",") + in_value;
    settings.emplace_back(item.fullname(), value);
  }
  RunConfig cfg;
  std::stable_partition(settings.begin(), settings.end(), [](const auto& s) { return s.first == "model.backbone"; });
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& assignments) {
  std::vector<std::pair<std::string, std::string>> settings;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' must look like section.key=value");
    settings.emplace_back(a.substr(0, eq), a.substr(eq + 1));
  }
  std::stable_partition(settings.begin(), settings.end(), [](const auto& s) { return s.first == "model.backbone"; });
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
}

void finalize(RunConfig& cfg) {
  cfg.model.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  auto check = [](const char* part, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string(part) + ": " + e.what());
    }
  };
  check("model", [&] { validate(cfg.model); });
  check("train", [&] { validate(cfg.train); });
  check("augment", [&] { validate(cfg.augment); });
  check("synth", [&] { validate(cfg.synth); });
  if (cfg.out_dir.empty()) throw ConfigError("run.out_dir must not be empty");
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    const std::string value = k.get(cfg);
    const bool quote = value.find_first_of(", ;#\"") != std::string::npos || value.empty();
    os << k.name.substr(dot + 1) << " = " << (quote ? "\"" + value + "\"" : value) << "\n";
  }
  return os.str();
}

std::filesystem::path output_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("GOCNET_OUT"); root != nullptr && *root != '\0') return std::filesystem::path(root) / p;
  return p;
}

}  // namespace gocnet
