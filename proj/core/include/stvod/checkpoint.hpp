#pragma once

#include <filesystem>
#include <string>

#include "stvod/config.hpp"
#include "stvod/parameters.hpp"

namespace stvod {

struct CheckpointInfo {
  std::size_t step = 0;
  std::string config_hash;
  /// Last completed training stage: "init", "spatial" or "temporal".
  std::string stage;
  RunConfig config;
};

/// Writes manifest.json (names, shapes, offsets, step, hash), params.bin
/// (little-endian float64 blobs in manifest order) and config.txt.
void save_checkpoint(const std::filesystem::path& dir, const ParameterStore& store,
                     const RunConfig& config, std::size_t step, const std::string& stage);

/// Reads the manifest and config without touching any parameters.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Loads every stored tensor into `store`. Throws ConfigError when the stored
/// model hash differs from `expected_hash`, and std::runtime_error on missing
/// or mis-shaped tensors. With `prefix` only matching names are loaded.
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, ParameterStore& store,
                               const std::string& expected_hash, const std::string& prefix = "");

}  // namespace stvod
