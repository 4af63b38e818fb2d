#pragma once

#include "ctlgan/generator.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace ctlgan {

inline constexpr uint32_t kCheckpointVersion = 1;

/// In-memory view of a checkpoint container. See docs/checkpoint_format.md for the byte layout.
struct Checkpoint {
  std::string kind;          // "generator", "encoder", "backbone", ...
  nlohmann::json metadata;   // kind-specific scalars (resolution, n, flags, configs)
  NamedTensors tensors;      // float32 / float64 / int64 tensors by name
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws InvalidData on a malformed file or an unsupported major version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

Checkpoint generator_checkpoint(const Generator& generator);
Generator generator_from_checkpoint(const Checkpoint& checkpoint);

void save_generator(const std::filesystem::path& path, const Generator& generator);
Generator load_generator(const std::filesystem::path& path);

}  // namespace ctlgan
