#pragma once

#include "ctlgan/adaptation.hpp"
#include "ctlgan/encoder.hpp"
#include "ctlgan/toy_domains.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace ctlgan {

/// Pipeline stages reachable from the command line.
const std::vector<std::string>& stage_names();

struct RunPaths {
  std::string dataset;    // input images (encoder photos, adaptation targets, stylize/invert inputs)
  std::string decoder;    // generator checkpoint read by the stage
  std::string encoder;    // encoder checkpoint read by stylize/invert
  std::string out = "out";
  std::string report;     // evaluate: report file (defaults to <out>/report.json)
  std::string generated;  // evaluate: generated images
  std::string reference;  // evaluate: real target-style images for FID
  std::string training;   // evaluate: few-shot training images for the cluster metric
  std::string inputs;     // evaluate: source photos paired with `generated` for the distance metric

  bool operator==(const RunPaths&) const = default;
};

struct RunConfig {
  std::string stage = "sample";
  int64_t resolution = 32;
  uint64_t seed = 0;
  std::string backbone = "toy";  // "toy" or a backbone checkpoint path
  RunPaths paths;
  GeneratorConfig generator;
  PretrainConfig pretrain;
  AdaptationConfig adaptation;
  EncoderConfig encoder;
  EncoderArchConfig encoder_arch;
  int64_t sample_count = 16;
  bool write_grid = true;
  bool allow_more_targets = false;
  std::vector<std::string> metrics = {"fid", "lpips_distance", "lpips_cluster"};
  std::string toy_domain = "A";
  int64_t toy_count = 64;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& config);

/// Parses a complete or partial document on top of the defaults. Unknown keys and invalid values
/// raise ConfigError. The top-level resolution is propagated to the generator and encoder shapes.
RunConfig run_config_from_json(const nlohmann::json& j);

std::vector<std::string> preset_names();
/// Partial document holding a named preset. Throws ConfigError for unknown names.
nlohmann::json preset(const std::string& name);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// defaults <- preset <- file <- flags, each applied as a JSON merge patch.
RunConfig resolve_run_config(const std::string& preset_name, const std::string& config_file,
                             const nlohmann::json& flag_overrides);

/// Directory named by CTLGAN_CACHE_DIR, else ~/.cache/ctlgan.
std::filesystem::path cache_dir();

/// Returns `path` when it exists, else the same relative path under cache_dir() when that exists,
/// else `path` unchanged.
std::filesystem::path resolve_checkpoint_path(const std::string& path);

}  // namespace ctlgan
