#include "ctlgan/commands.hpp"
#include "ctlgan/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

namespace {

// Sets `doc[a][b]...` from a dotted key; the value is parsed as JSON when possible.
void apply_set(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ctlgan::ConfigError("--set expects key=value, got '" + assignment + "'");
  const auto raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::stringstream keys(assignment.substr(0, eq));
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

struct Options {
  std::string config, preset, out, backbone;
  std::optional<uint64_t> seed;
  std::optional<int64_t> resolution;
  std::vector<std::string> sets;
  std::string dataset, decoder, encoder, generated, reference, training, inputs, report, domain;
  std::optional<int64_t> count, iterations, stage1, dual, steps;
  std::optional<double> lambda_cdt;
  std::vector<std::string> metrics;
  bool allow_more_targets = false;
  bool path1_only = false;
};

nlohmann::json overrides(const std::string& stage, const Options& o) {
  nlohmann::json j = {{"stage", stage}};
  auto path = [&](const char* key, const std::string& v) {
    if (!v.empty()) j["paths"][key] = v;
  };
  if (o.seed) j["seed"] = *o.seed;
  if (o.resolution) j["resolution"] = *o.resolution;
  if (!o.backbone.empty()) j["backbone"] = o.backbone;
  path("out", o.out);
  path("dataset", o.dataset);
  path("decoder", o.decoder);
  path("encoder", o.encoder);
  path("generated", o.generated);
  path("reference", o.reference);
  path("training", o.training);
  path("inputs", o.inputs);
  path("report", o.report);
  if (o.count) {
    j[stage == "toy-data" ? "toy_count" : "sample_count"] = *o.count;
  }
  if (!o.domain.empty()) j["toy_domain"] = o.domain;
  if (o.iterations) j["adaptation"]["iterations"] = *o.iterations;
  if (o.lambda_cdt) j["adaptation"]["lambda_cdt"] = *o.lambda_cdt;
  if (o.allow_more_targets) j["allow_more_targets"] = true;
  if (o.stage1) j["encoder"]["stage1_iterations"] = *o.stage1;
  if (o.dual) j["encoder"]["dual_path_iterations"] = *o.dual;
  if (o.path1_only) j["encoder"]["dual_path"] = false;
  if (o.steps) j["pretrain"]["steps"] = *o.steps;
  if (!o.metrics.empty()) j["metrics"] = o.metrics;
  for (const auto& s : o.sets) apply_set(j, s);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot artistic portrait generation pipeline"};
  app.require_subcommand(1);
  Options o;

  auto shared = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--preset", o.preset, "Named preset (applied before --config)");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--resolution", o.resolution, "Image resolution (power of two)");
    sub->add_option("--backbone", o.backbone, "\"toy\" or a backbone checkpoint");
    sub->add_option("--set", o.sets, "Override any config key: dotted.key=json");
  };

  auto* train = app.add_subcommand("train-encoder", "Train the style encoder against a frozen decoder");
  train->add_option("--dataset", o.dataset, "Directory of training photos");
  train->add_option("--decoder", o.decoder, "Source decoder checkpoint");
  train->add_option("--stage1-iterations", o.stage1);
  train->add_option("--dual-iterations", o.dual);
  train->add_flag("--path1-only", o.path1_only, "Second phase uses path-1 only");

  auto* adapt = app.add_subcommand("adapt", "Adapt a source decoder to a few target images");
  adapt->add_option("--dataset", o.dataset, "Directory of 1-10 target images");
  adapt->add_option("--decoder", o.decoder, "Source decoder checkpoint");
  adapt->add_option("--iterations", o.iterations);
  adapt->add_option("--lambda-cdt", o.lambda_cdt);
  adapt->add_flag("--allow-more-targets", o.allow_more_targets, "Accept more than 10 target images");

  auto* stylize = app.add_subcommand("stylize", "Encode photos and decode them with an adapted decoder");
  auto* invert = app.add_subcommand("invert", "Encode photos and reconstruct them with the source decoder");
  for (auto* sub : {stylize, invert}) {
    sub->add_option("--dataset", o.dataset, "Directory of input photos");
    sub->add_option("--encoder", o.encoder, "Encoder checkpoint");
    sub->add_option("--decoder", o.decoder, "Decoder checkpoint");
  }

  auto* sample = app.add_subcommand("sample", "Sample images from a decoder");
  sample->add_option("--decoder", o.decoder, "Decoder checkpoint");
  sample->add_option("--count", o.count, "Number of images");

  auto* evaluate = app.add_subcommand("evaluate", "Compute FID and LPIPS metrics");
  evaluate->add_option("--generated", o.generated, "Generated images");
  evaluate->add_option("--reference", o.reference, "Real target-style images (FID)");
  evaluate->add_option("--training", o.training, "Few-shot training images (LPIPS cluster)");
  evaluate->add_option("--inputs", o.inputs, "Input photos paired with --generated (LPIPS distance)");
  evaluate->add_option("--report", o.report, "Report file");
  evaluate->add_option("--metrics", o.metrics, "Subset of fid, lpips_distance, lpips_cluster");

  auto* toy = app.add_subcommand("toy-data", "Render a synthetic toy-domain image set");
  toy->add_option("--domain", o.domain, "A or B");
  toy->add_option("--count", o.count, "Number of images");

  auto* pretrain = app.add_subcommand("pretrain-toy", "Fit a toy source decoder to domain A");
  pretrain->add_option("--steps", o.steps);

  for (auto* sub : {train, adapt, stylize, invert, sample, evaluate, toy, pretrain}) shared(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ctlgan::kExitConfig;
  }

  const auto stage = app.get_subcommands().front()->get_name();
  ctlgan::RunConfig cfg;
  try {
    cfg = ctlgan::resolve_run_config(o.preset, o.config, overrides(stage, o));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ctlgan::exit_code_for(e);
  }
  return ctlgan::run_stage(cfg, std::cout, std::cerr);
}
