#pragma once

#include <filesystem>
#include <string>

#include "plume/cnf.hpp"

namespace plume {

inline constexpr int kCheckpointVersion = 1;

/// Header fields of a stored model.
struct CheckpointInfo {
  int version = 0;
  std::string dtype;           // "f32" or "f64"
  FlowConfig config;
  bool actnorm_initialized = false;
  std::string channel_order;   // comma separated observation channel names
  std::string extra_json;      // caller metadata, a JSON object
};

/// Binary container: magic, version, JSON header, raw little-endian arrays.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FlowModel<T>& model,
                     const std::string& extra_json = "{}");

/// Loads a checkpoint, converting precision when the stored dtype differs from T.
template <typename T>
FlowModel<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace plume
