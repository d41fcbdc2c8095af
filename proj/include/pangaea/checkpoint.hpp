#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "pangaea/model.hpp"

namespace pangaea {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "PGCK", u32 version, u64 manifest length, manifest JSON,
// float32 little-endian payload, u64 FNV-1a checksum of everything before it.
struct CheckpointParam {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // in bytes, from the start of the payload
};

struct CheckpointHead {
  std::string name;
  std::size_t out_dim = 0;
  std::size_t layers = 2;
};

struct CheckpointManifest {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::vector<CheckpointHead> heads;
  std::size_t step = 0;
  std::string rng_state;
  // Free-form caller metadata, stored with sorted keys.
  nlohmann::json extra = nlohmann::json::object();
  std::vector<CheckpointParam> params;
};

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::unique_ptr<Model> model;
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

std::string checkpoint_bytes(const Model& model, std::size_t step = 0,
                             const std::string& rng_state = "",
                             const nlohmann::json& extra = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::size_t step = 0,
                     const std::string& rng_state = "",
                     const nlohmann::json& extra = nlohmann::json::object());

// Validates magic, version, length, checksum and parameter shapes; each failure
// raises its own error kind (Format, Version, Truncated, Checksum, Shape).
CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint parse_checkpoint(const std::string& bytes);
// Copies parameters into an existing model; every parameter must match by name and shape.
CheckpointManifest load_checkpoint_into(const std::filesystem::path& path, Model& model);

}  // namespace pangaea
