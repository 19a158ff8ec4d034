#include "stvod/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

namespace stvod {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParameterStore& store, const RunConfig& config,
                     std::size_t step, const std::string& stage) {
  fs::create_directories(dir);
  json params = json::array();
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  std::size_t offset = 0;
  for (const auto& p : store.all()) {
    const Tensor& t = p.var.value();
    params.push_back({{"name", p.name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    for (double v : t.data()) put_le(blob, v);
    offset += t.size();
  }
  const json manifest{{"step", step},
                      {"stage", stage},
                      {"config_hash", model_hash(config.model)},
                      {"dtype", "float64-le"},
                      {"params", params}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  std::ofstream(dir / "config.txt") << to_text(config);
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
  const json manifest = json::parse(in);
  CheckpointInfo info;
  info.step = manifest.at("step").get<std::size_t>();
  info.stage = manifest.value("stage", "init");
  info.config_hash = manifest.at("config_hash").get<std::string>();
  info.config = load_config((dir / "config.txt").string());
  return info;
}

CheckpointInfo load_checkpoint(const fs::path& dir, ParameterStore& store,
                               const std::string& expected_hash, const std::string& prefix) {
  CheckpointInfo info = read_checkpoint_info(dir);
  if (info.config_hash != expected_hash) {
    throw ConfigError("checkpoint " + dir.string() + " was written for model config " +
                      info.config_hash + " but the current model config hashes to " +
                      expected_hash + "; parameter shapes would not match");
  }
  std::ifstream mf(dir / "manifest.json");
  const json manifest = json::parse(mf);
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("missing params.bin in " + dir.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                   std::istreambuf_iterator<char>());
  for (const auto& entry : manifest.at("params")) {
    const auto name = entry.at("name").get<std::string>();
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    if (!store.contains(name)) throw std::runtime_error("checkpoint tensor " + name + " has no parameter");
    Var var = store.get(name).var;
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != var.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_to_string(shape) +
                               ", parameter has " + shape_to_string(var.shape()));
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if ((offset + count) * 8 > bytes.size()) {
      throw std::runtime_error("params.bin too short for tensor " + name);
    }
    Tensor& value = var.mutable_value();
    for (std::size_t i = 0; i < count; ++i) value[i] = get_le(bytes.data() + (offset + i) * 8);
  }
  return info;
}

}  // namespace stvod
