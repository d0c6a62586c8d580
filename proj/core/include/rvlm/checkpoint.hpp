#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "rvlm/model.hpp"

namespace rvlm {

/// Layout: the 8 bytes "RVLMCKPT", a little-endian u64 manifest length, the
/// JSON manifest, then every parameter as raw little-endian f64 in manifest
/// order. The manifest carries the model config, caller provenance, one entry
/// per parameter (name, group, shape, offset, FNV-1a hash), a hash of the
/// whole data block and per-group fingerprints. No timestamps are written, so
/// equal models produce equal bytes.
std::string serialize_checkpoint(const RegionVlm& model, const nlohmann::json& provenance = nlohmann::json::object());
void save_checkpoint(const RegionVlm& model, const std::filesystem::path& path,
                     const nlohmann::json& provenance = nlohmann::json::object());

struct CheckpointManifest {
  ModelConfig config;
  nlohmann::json provenance;
  std::map<std::string, std::uint64_t> fingerprints;
};

/// Throws CorruptArchive on bad magic, truncation, hash mismatch or a
/// parameter set that does not match the recorded config.
std::unique_ptr<RegionVlm> deserialize_checkpoint(const std::string& bytes, CheckpointManifest* manifest = nullptr);
std::unique_ptr<RegionVlm> load_checkpoint(const std::filesystem::path& path, CheckpointManifest* manifest = nullptr);

/// Loads parameter values into an existing model of identical structure.
void restore_checkpoint(RegionVlm& model, const std::filesystem::path& path);

}  // namespace rvlm
