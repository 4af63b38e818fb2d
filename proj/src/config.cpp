#include "ctlgan/config.hpp"

#include "ctlgan/checkpoint.hpp"
#include "ctlgan/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace fs = std::filesystem;

namespace ctlgan {

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"train-encoder", "adapt",    "stylize",     "sample",
                                                 "evaluate",      "invert",   "toy-data",    "pretrain-toy"};
  return names;
}

namespace {

nlohmann::json to_json(const RunPaths& p) {
  return {{"dataset", p.dataset},     {"decoder", p.decoder},   {"encoder", p.encoder},
          {"out", p.out},             {"report", p.report},     {"generated", p.generated},
          {"reference", p.reference}, {"training", p.training}, {"inputs", p.inputs}};
}

RunPaths paths_from_json(const nlohmann::json& j, RunPaths p) {
  auto get = [&](const char* key, std::string& field) { field = j.value(key, field); };
  get("dataset", p.dataset);
  get("decoder", p.decoder);
  get("encoder", p.encoder);
  get("out", p.out);
  get("report", p.report);
  get("generated", p.generated);
  get("reference", p.reference);
  get("training", p.training);
  get("inputs", p.inputs);
  return p;
}

void check_known_keys(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (reference.at(key).is_object() && !value.is_null()) check_known_keys(value, reference.at(key), where + key + ".");
  }
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"fid", "lpips_distance", "lpips_cluster"};
  return names;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return {{"stage", c.stage},
          {"resolution", c.resolution},
          {"seed", c.seed},
          {"backbone", c.backbone},
          {"paths", to_json(c.paths)},
          {"generator", to_json(c.generator)},
          {"pretrain", to_json(c.pretrain)},
          {"adaptation", to_json(c.adaptation)},
          {"encoder", to_json(c.encoder)},
          {"encoder_arch", to_json(c.encoder_arch)},
          {"sample_count", c.sample_count},
          {"write_grid", c.write_grid},
          {"allow_more_targets", c.allow_more_targets},
          {"metrics", c.metrics},
          {"toy_domain", c.toy_domain},
          {"toy_count", c.toy_count}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  check_known_keys(j, to_json(c), "");
  try {
    c.stage = j.value("stage", c.stage);
    c.resolution = j.value("resolution", c.resolution);
    c.seed = j.value("seed", c.seed);
    c.backbone = j.value("backbone", c.backbone);
    if (j.contains("paths")) c.paths = paths_from_json(j.at("paths"), c.paths);
    if (j.contains("generator")) c.generator = generator_config_from_json(j.at("generator"));
    if (j.contains("pretrain")) c.pretrain = pretrain_config_from_json(j.at("pretrain"));
    if (j.contains("adaptation")) c.adaptation = adaptation_config_from_json(j.at("adaptation"));
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
    if (j.contains("encoder_arch")) c.encoder_arch = encoder_arch_from_json(j.at("encoder_arch"));
    c.sample_count = j.value("sample_count", c.sample_count);
    c.write_grid = j.value("write_grid", c.write_grid);
    c.allow_more_targets = j.value("allow_more_targets", c.allow_more_targets);
    if (j.contains("metrics")) c.metrics = j.at("metrics").get<std::vector<std::string>>();
    c.toy_domain = j.value("toy_domain", c.toy_domain);
    c.toy_count = j.value("toy_count", c.toy_count);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  const auto& stages = stage_names();
  if (std::find(stages.begin(), stages.end(), c.stage) == stages.end()) {
    throw ConfigError("unknown stage '" + c.stage + "'");
  }
  try {
    layer_count(c.resolution);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.generator.resolution = c.resolution;
  c.encoder_arch.resolution = c.resolution;
  if (c.sample_count < 0) throw ConfigError("sample_count must be >= 0");
  if (c.toy_count < 0) throw ConfigError("toy_count must be >= 0");
  if (c.toy_domain != "A" && c.toy_domain != "B") throw ConfigError("toy_domain must be A or B");
  for (const auto& m : c.metrics) {
    if (std::find(metric_names().begin(), metric_names().end(), m) == metric_names().end()) {
      throw ConfigError("unknown metric '" + m + "'");
    }
  }
  try {
    c.adaptation.validate();
    c.encoder.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"paper-cartoon",          "paper-sketches",    "paper-raphael",  "paper-caricature",
          "paper-roy-lichtenstein", "paper-sunglasses",  "paper-one-shot", "paper-encoder",
          "toy"};
}

nlohmann::json preset(const std::string& name) {
  auto decoder = [](double lambda_cdt, int64_t iterations, double w_plus) {
    return nlohmann::json{{"resolution", 256},
                          {"generator", {{"latent_dim", 512}, {"channels", 512}, {"mapping_layers", 8}}},
                          {"adaptation",
                           {{"lambda_adv", 1.0},
                            {"lambda_cdt", lambda_cdt},
                            {"lambda_kl_adain", 1000.0},
                            {"alpha", 2.0},
                            {"w_plus", w_plus},
                            {"iterations", iterations},
                            {"learning_rate", 0.002},
                            {"max_target_images", 10}}}};
  };
  if (name == "paper-cartoon") return decoder(0.005, 1000, 2.0);
  if (name == "paper-sketches") return decoder(0.05, 5000, 1.5);
  if (name == "paper-raphael") return decoder(0.05, 3000, 2.0);
  if (name == "paper-caricature") return decoder(0.02, 3000, 2.0);
  if (name == "paper-roy-lichtenstein") return decoder(0.005, 1250, 2.0);
  if (name == "paper-sunglasses") return decoder(0.005, 2000, 2.0);
  if (name == "paper-one-shot") return decoder(0.005, 600, 2.0);
  if (name == "paper-encoder") {
    return {{"resolution", 256},
            {"generator", {{"latent_dim", 512}, {"channels", 512}, {"mapping_layers", 8}}},
            {"encoder_arch",
             {{"latent_dim", 512}, {"kind", "transformer"}, {"token_dim", 512}, {"feature_channels", 512}}},
            {"encoder",
             {{"lambda_l2", 1.0},
              {"lambda_lpips", 0.8},
              {"lambda_reg", 0.0},
              {"lambda_iden", 0.1},
              {"lambda_z_predict", 0.1},
              {"lambda_path1", 1.0},
              {"learning_rate", 0.0001},
              {"stage1_iterations", 170000},
              {"dual_path_iterations", 70000}}}};
  }
  if (name == "toy") {
    const auto g = toy_generator_config(32);
    return {{"resolution", 32},
            {"generator", to_json(g)},
            {"pretrain", {{"steps", 1500}, {"batch", 16}, {"lr", 0.01}}},
            {"adaptation",
             {{"lambda_cdt", 0.05},
              {"iterations", 2000},
              {"discriminator_channels", 16},
              {"r1_gamma", 0.1}}},
            {"encoder_arch",
             {{"latent_dim", g.latent_dim},
              {"feature_channels", 16},
              {"token_dim", 64},
              {"depth", 2},
              {"heads", 4},
              {"head_dim", 16},
              {"mlp_dim", 128}}},
            {"encoder", {{"stage1_iterations", 300}, {"dual_path_iterations", 300}, {"learning_rate", 0.001}}}};
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

RunConfig resolve_run_config(const std::string& preset_name, const std::string& config_file,
                             const nlohmann::json& flag_overrides) {
  auto doc = to_json(RunConfig{});
  if (!preset_name.empty()) doc.merge_patch(preset(preset_name));
  if (!config_file.empty()) doc.merge_patch(read_json_file(config_file));
  if (!flag_overrides.is_null()) doc.merge_patch(flag_overrides);
  return run_config_from_json(doc);
}

fs::path cache_dir() {
  if (const char* env = std::getenv("CTLGAN_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  const char* home = std::getenv("HOME");
  return fs::path(home != nullptr ? home : ".") / ".cache" / "ctlgan";
}

fs::path resolve_checkpoint_path(const std::string& path) {
  fs::path p(path);
  if (p.empty() || fs::exists(p) || p.is_absolute()) return p;
  auto cached = cache_dir() / p;
  return fs::exists(cached) ? cached : p;
}

}  // namespace ctlgan
