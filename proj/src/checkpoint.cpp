#include "pwkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>
#include <fstream>
#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pwkd {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'P', 'W', 'K', 'D'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

struct NamedArray {
  std::string name;
  const Tensor* tensor;
};

// canonical array order: structural walk, then per-width classifier, then
// sorted velocity entries
template <typename Fn>
void walk_arrays(SlimmableNet& net, Fn&& fn) {
  // callback receives (name, Tensor&) so the loader can fill in place
  for_each_unit(net, [&](ConvUnitT<float>& u) {
    fn(u.w.name, u.w.value);
    for (auto& bn : u.bn) {
      fn(bn.gamma.name, bn.gamma.value);
      fn(bn.beta.name, bn.beta.value);
      fn(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_mean", bn.running_mean);
      fn(bn.gamma.name.substr(0, bn.gamma.name.size() - 6) + ".running_var", bn.running_var);
    }
  });
  for (auto& p : net.cls_w) fn(p.name, p.value);
  for (auto& p : net.cls_b) fn(p.name, p.value);
}

json meta_to_json(const CheckpointMeta& meta) {
  json j;
  j["family"] = family_name(meta.spec.family);
  j["n"] = meta.spec.n;
  j["k"] = meta.spec.k;
  j["in_channels"] = meta.spec.in_channels;
  j["in_h"] = meta.spec.in_h;
  j["in_w"] = meta.spec.in_w;
  j["classes"] = meta.spec.classes;
  j["tap_points"] = meta.spec.tap_points;
  j["widths"] = meta.widths;
  j["seed"] = meta.seed;
  j["epoch"] = meta.epoch;
  j["dataset"] = meta.dataset;
  j["norm_mean"] = meta.norm_mean;
  j["norm_std"] = meta.norm_std;
  return j;
}

CheckpointMeta meta_from_json(const json& j, const std::string& path) {
  try {
    CheckpointMeta meta;
    meta.spec.family = parse_family(j.at("family").get<std::string>());
    meta.spec.n = j.at("n").get<int>();
    meta.spec.k = j.at("k").get<int>();
    meta.spec.in_channels = j.at("in_channels").get<int>();
    meta.spec.in_h = j.at("in_h").get<int>();
    meta.spec.in_w = j.at("in_w").get<int>();
    meta.spec.classes = j.at("classes").get<int>();
    meta.spec.tap_points = j.at("tap_points").get<std::vector<std::string>>();
    meta.widths = j.at("widths").get<std::vector<double>>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.epoch = j.at("epoch").get<int>();
    meta.dataset = j.at("dataset").get<std::string>();
    meta.norm_mean = j.at("norm_mean").get<std::vector<float>>();
    meta.norm_std = j.at("norm_std").get<std::vector<float>>();
    return meta;
  } catch (const json::exception& e) {
    throw IoError(path + ": malformed checkpoint metadata: " + e.what());
  }
}

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u16(std::ofstream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }

uint32_t read_u32(std::ifstream& f, const std::string& path) {
  uint32_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated checkpoint");
  return v;
}
uint16_t read_u16(std::ifstream& f, const std::string& path) {
  uint16_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 2)) throw IoError(path + ": truncated checkpoint");
  return v;
}
uint8_t read_u8(std::ifstream& f, const std::string& path) {
  uint8_t v;
  if (!f.read(reinterpret_cast<char*>(&v), 1)) throw IoError(path + ": truncated checkpoint");
  return v;
}

void write_array(std::ofstream& f, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw IoError("array name too long: " + name);
  write_u16(f, static_cast<uint16_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  f.put(static_cast<char>(kDtypeF32));
  f.put(static_cast<char>(t.rank()));
  for (int d : t.shape) write_u32(f, static_cast<uint32_t>(d));
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::string& path, SlimmableNet& net, const CheckpointMeta& meta,
                     const Sgd* optimizer) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");

  uint32_t count = 0;
  walk_arrays(net, [&](const std::string&, Tensor&) { ++count; });
  if (optimizer) count += static_cast<uint32_t>(optimizer->velocity().size());

  const std::string meta_str = meta_to_json(meta).dump();
  f.write(kMagic, 4);
  write_u32(f, kVersion);
  write_u32(f, static_cast<uint32_t>(meta_str.size()));
  f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  write_u32(f, count);

  walk_arrays(net, [&](const std::string& name, Tensor& t) { write_array(f, name, t); });
  if (optimizer)
    for (const auto& [name, t] : optimizer->velocity()) write_array(f, "velocity/" + name, t);
  if (!f) throw IoError("write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  if (uint32_t v = read_u32(f, path); v != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(v));

  const uint32_t meta_len = read_u32(f, path);
  std::string meta_str(meta_len, '\0');
  if (!f.read(meta_str.data(), meta_len)) throw IoError(path + ": truncated metadata");
  json mj = json::parse(meta_str, nullptr, false);
  if (mj.is_discarded()) throw IoError(path + ": metadata is not valid JSON");

  LoadedCheckpoint out{.net = SlimmableNet{}, .meta = meta_from_json(mj, path), .optimizer = {}};
  out.net = build<float>(out.meta.spec, out.meta.widths, out.meta.seed);

  std::map<std::string, Tensor> arrays;
  const uint32_t count = read_u32(f, path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = read_u16(f, path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) throw IoError(path + ": truncated array name");
    const uint8_t dtype = read_u8(f, path);
    if (dtype != kDtypeF32)
      throw IoError(path + ": entry '" + name + "' has unsupported dtype code " +
                    std::to_string(dtype));
    const uint8_t rank = read_u8(f, path);
    std::vector<int> shape;
    size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const uint32_t dim = read_u32(f, path);
      if (dim == 0 || dim > (1u << 28)) throw IoError(path + ": entry '" + name + "' has bad dims");
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    Tensor t(shape);
    if (!f.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float))))
      throw IoError(path + ": truncated payload for entry '" + name + "'");
    if (!arrays.emplace(name, std::move(t)).second)
      throw IoError(path + ": duplicate entry '" + name + "'");
  }

  std::set<std::string> consumed;
  walk_arrays(out.net, [&](const std::string& name, Tensor& dst) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError(path + ": missing entry '" + name + "'");
    if (it->second.shape != dst.shape)
      throw IoError(path + ": entry '" + name + "' has shape " + shape_str(it->second.shape) +
                    ", network expects " + shape_str(dst.shape));
    dst = it->second;
    consumed.insert(name);
  });
  for (auto& [name, t] : arrays) {
    if (name.rfind("velocity/", 0) == 0) {
      out.optimizer.velocity()[name.substr(9)] = t;
      consumed.insert(name);
    }
  }
  for (auto& [name, t] : arrays)
    if (!consumed.count(name))
      throw IoError(path + ": unexpected extra entry '" + name + "'");
  return out;
}

}  // namespace pwkd
