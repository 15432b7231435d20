#include "gocnet/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace gocnet {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename V>
std::vector<std::uint8_t> to_bytes(const V* data, std::size_t n) {
  std::vector<std::uint8_t> out(n * sizeof(V));
  if (n != 0) std::memcpy(out.data(), data, out.size());
  return out;
}

template <typename V>
std::vector<V> from_bytes(const CheckpointEntry& e, DType want) {
  if (e.dtype != want) throw DataError("checkpoint entry " + e.name + " has an unexpected dtype");
  if (e.payload.size() % sizeof(V) != 0) throw DataError("checkpoint entry " + e.name + " has a ragged payload");
  std::vector<V> out(e.payload.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), e.payload.data(), e.payload.size());
  return out;
}

}  // namespace

CheckpointEntry& Checkpoint::upsert(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e;
  entries_.push_back(CheckpointEntry{name, DType::F32, {}, {}});
  return entries_.back();
}

void Checkpoint::set_tensor(const std::string& name, const Tensor4<float>& t) {
  auto& e = upsert(name);
  const Shape& s = t.shape();
  e.dtype = DType::F32;
  e.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
            static_cast<std::uint32_t>(s.w)};
  e.payload = to_bytes(t.ptr(), t.numel());
}

void Checkpoint::set_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  auto& e = upsert(name);
  e.dtype = DType::I64;
  e.dims = {static_cast<std::uint32_t>(values.size())};
  e.payload = to_bytes(values.data(), values.size());
}

void Checkpoint::set_f64(const std::string& name, const std::vector<double>& values) {
  auto& e = upsert(name);
  e.dtype = DType::F64;
  e.dims = {static_cast<std::uint32_t>(values.size())};
  e.payload = to_bytes(values.data(), values.size());
}

void Checkpoint::set_bytes(const std::string& name, const std::string& bytes) {
  auto& e = upsert(name);
  e.dtype = DType::Bytes;
  e.dims = {static_cast<std::uint32_t>(bytes.size())};
  e.payload.assign(bytes.begin(), bytes.end());
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw DataError("checkpoint has no entry " + name);
}

Tensor4<float> Checkpoint::tensor(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dims.size() != 4) throw DataError("checkpoint entry " + name + " is not a rank-4 tensor");
  Shape s{e.dims[0], e.dims[1], e.dims[2], e.dims[3]};
  auto data = from_bytes<float>(e, DType::F32);
  if (data.size() != s.numel()) throw DataError("checkpoint entry " + name + " payload does not match its dims");
  return Tensor4<float>(s, std::move(data));
}

std::vector<std::int64_t> Checkpoint::i64(const std::string& name) const {
  return from_bytes<std::int64_t>(entry(name), DType::I64);
}

std::int64_t Checkpoint::scalar_i64(const std::string& name) const {
  const auto v = i64(name);
  if (v.size() != 1) throw DataError("checkpoint entry " + name + " is not a scalar");
  return v[0];
}

std::vector<double> Checkpoint::f64(const std::string& name) const { return from_bytes<double>(entry(name), DType::F64); }

std::string Checkpoint::bytes(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::Bytes) throw DataError("checkpoint entry " + name + " is not a byte string");
  return std::string(e.payload.begin(), e.payload.end());
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const std::string& where) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated checkpoint: " + where);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write("GOCK", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.entries().size()));
    for (const auto& e : ckpt.entries()) {
      put_u32(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      os.put(static_cast<char>(e.dtype));
      put_u32(os, static_cast<std::uint32_t>(e.dims.size()));
      for (auto d : e.dims) put_u32(os, d);
      os.write(reinterpret_cast<const char*>(e.payload.data()), static_cast<std::streamsize>(e.payload.size()));
    }
    if (!os.flush()) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "GOCK", 4) != 0) throw DataError("not a checkpoint file: " + path.string());
  const std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const std::uint32_t count = get_u32(is, "entry count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(is, "name length");
    if (len > (1u << 16)) throw DataError("corrupt checkpoint entry name in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated checkpoint: name");
    const int tag = is.get();
    if (tag < 0 || tag > 3) throw DataError("checkpoint entry " + name + " has an unknown dtype");
    const std::uint32_t rank = get_u32(is, name);
    if (rank > 8) throw DataError("checkpoint entry " + name + " has an implausible rank");
    std::vector<std::uint32_t> dims(rank);
    std::uint64_t elems = 1;
    for (auto& d : dims) {
      d = get_u32(is, name);
      elems *= d;
    }
    const DType dtype = static_cast<DType>(tag);
    const std::uint64_t width = dtype == DType::F32 ? 4 : dtype == DType::Bytes ? 1 : 8;
    std::vector<std::uint8_t> payload(elems * width);
    if (!is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()))) {
      throw DataError("truncated checkpoint payload for " + name);
    }
    CheckpointEntry e{std::move(name), dtype, std::move(dims), std::move(payload)};
    if (ckpt.has(e.name)) throw DataError("duplicate checkpoint entry " + e.name);
    switch (dtype) {
      case DType::F32: {
        if (e.dims.size() != 4) throw DataError("tensor entry " + e.name + " must have rank 4");
        const auto& dm = e.dims;
        ckpt.set_tensor(e.name, Tensor4<float>(Shape{dm[0], dm[1], dm[2], dm[3]}, from_bytes<float>(e, DType::F32)));
        break;
      }
      case DType::I64: ckpt.set_i64(e.name, from_bytes<std::int64_t>(e, DType::I64)); break;
      case DType::F64: ckpt.set_f64(e.name, from_bytes<double>(e, DType::F64)); break;
      case DType::Bytes: ckpt.set_bytes(e.name, std::string(e.payload.begin(), e.payload.end())); break;
    }
  }
  return ckpt;
}

std::string spec_to_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(spec.variant);
  j["backbone"] = {{"kind", to_string(spec.backbone.kind)},
                   {"stage_channels", spec.backbone.stage_channels},
                   {"blocks_per_stage", spec.backbone.blocks_per_stage},
                   {"image_size", spec.backbone.image_size}};
  j["tp"] = {{"operator", kernel_id(spec.tp.op)},
             {"mode", to_string(spec.tp.mode)},
             {"padding", spec.tp.padding.kind == PadKind::Replicate ? "replicate" : "zero"},
             {"padding_size", spec.tp.padding.size}};
  j["mta"] = {{"reduction", spec.mta.reduction},
              {"operator", kernel_id(spec.mta.op)},
              {"gate_mode", to_string(spec.mta.gate_mode)},
              {"fusion", to_string(spec.mta.fusion)},
              {"alpha_init", spec.mta.alpha_init}};
  j["in_channels"] = spec.in_channels;
  j["num_classes"] = spec.num_classes;
  j["seed"] = spec.seed;
  j["dual_tp"] = spec.dual_tp;
  j["dual_mta"] = spec.dual_mta;
  return j.dump();
}

ModelSpec spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelSpec s;
    s.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& b = j.at("backbone");
    s.backbone.kind = parse_backbone(b.at("kind").get<std::string>());
    s.backbone.stage_channels = b.at("stage_channels").get<std::vector<std::size_t>>();
    s.backbone.blocks_per_stage = b.at("blocks_per_stage").get<std::size_t>();
    s.backbone.image_size = b.at("image_size").get<std::size_t>();
    const auto& tp = j.at("tp");
    s.tp.op = parse_kernel_name(tp.at("operator").get<std::string>());
    s.tp.mode = parse_tp_mode(tp.at("mode").get<std::string>());
    const auto pad = tp.at("padding_size").get<std::size_t>();
    s.tp.padding = tp.at("padding").get<std::string>() == "replicate" ? Padding::replicate(pad) : Padding::zero(pad);
    const auto& m = j.at("mta");
    s.mta.reduction = m.at("reduction").get<std::size_t>();
    s.mta.op = parse_kernel_name(m.at("operator").get<std::string>());
    s.mta.gate_mode = parse_tp_mode(m.at("gate_mode").get<std::string>());
    s.mta.fusion = parse_fusion_mode(m.at("fusion").get<std::string>());
    s.mta.alpha_init = m.at("alpha_init").get<double>();
    s.in_channels = j.at("in_channels").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.dual_tp = j.at("dual_tp").get<bool>();
    s.dual_mta = j.at("dual_mta").get<bool>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model description in checkpoint: ") + e.what());
  }
}

void store_model(Checkpoint& ckpt, const Model<float>& model) {
  ckpt.set_bytes("meta.spec", spec_to_json(model.spec));
  for (const auto& e : model.params.entries()) {
    ckpt.set_tensor("param." + e.name, e.var.value());
    if (!e.m.empty()) {
      ckpt.set_tensor("adam.m." + e.name, e.m);
      ckpt.set_tensor("adam.v." + e.name, e.v);
    }
  }
}

Model<float> restore_model(const Checkpoint& ckpt) {
  Model<float> model = build<float>(spec_from_json(ckpt.bytes("meta.spec")));
  for (auto& e : model.params.entries()) {
    Tensor4<float> value = ckpt.tensor("param." + e.name);
    if (value.shape() != e.var.shape()) {
      throw DataError("checkpoint tensor " + e.name + " has shape " + value.shape().str() + ", model expects " +
                      e.var.shape().str());
    }
    e.var.mutable_value() = std::move(value);
    if (ckpt.has("adam.m." + e.name)) {
      e.m = ckpt.tensor("adam.m." + e.name);
      e.v = ckpt.tensor("adam.v." + e.name);
    }
  }
  return model;
}

}  // namespace gocnet
