#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace lacune {

/// A model checkpoint: raw little-endian float32 weights at `path` and a
/// JSON sidecar at `path + ".json"` with the model kind, config echo,
/// training log and the weights' SHA-256.
struct Checkpoint {
  std::string kind;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<float> weights;
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Verifies the sidecar format tag and the weights hash.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lacune
