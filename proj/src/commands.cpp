#include "ctlgan/commands.hpp"

#include "ctlgan/checkpoint.hpp"
#include "ctlgan/errors.hpp"
#include "ctlgan/image_io.hpp"
#include "ctlgan/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

namespace fs = std::filesystem;

namespace ctlgan {

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error) != nullptr) return kExitConfig;
  if (dynamic_cast<const NumericFailure*>(&error) != nullptr) return kExitNumeric;
  if (dynamic_cast<const UndefinedMetric*>(&error) != nullptr) return kExitNumeric;
  if (dynamic_cast<const InvalidData*>(&error) != nullptr) return kExitInvalidData;
  if (dynamic_cast<const InvalidArgument*>(&error) != nullptr) return kExitInvalidData;
  return 1;
}

std::shared_ptr<FeatureBackbone> load_backbone(const std::string& name, int64_t image_channels) {
  if (name == "toy") return make_toy_backbone(image_channels);
  auto path = resolve_checkpoint_path(name);
  if (!fs::exists(path)) throw ConfigError("backbone checkpoint not found: " + name);
  auto backbone = ConvStackBackbone::from_checkpoint(read_checkpoint(path));
  if (backbone->input_channels() != image_channels) throw ConfigError("backbone channel count does not match");
  return backbone;
}

namespace {

constexpr int64_t kChunk = 16;

class JsonLog {
 public:
  explicit JsonLog(const fs::path& out) : file_(out / "log.jsonl", std::ios::app) {
    if (!file_) throw ConfigError("cannot open log in " + out.string());
  }
  void write(const std::string& event, nlohmann::json body) {
    body["event"] = event;
    file_ << body.dump() << '\n';
    file_.flush();
  }

 private:
  std::ofstream file_;
};

fs::path prepare_out(const RunConfig& cfg) {
  fs::path out(cfg.paths.out);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << to_json(cfg).dump(2) << '\n';
  return out;
}

Generator require_decoder(const RunConfig& cfg) {
  if (cfg.paths.decoder.empty()) throw ConfigError("a decoder checkpoint is required (paths.decoder)");
  auto path = resolve_checkpoint_path(cfg.paths.decoder);
  if (!fs::exists(path)) throw ConfigError("decoder checkpoint not found: " + cfg.paths.decoder);
  auto g = load_generator(path);
  if (g.resolution() != cfg.resolution) {
    throw ConfigError("decoder resolution " + std::to_string(g.resolution()) + " does not match run resolution " +
                      std::to_string(cfg.resolution));
  }
  return g;
}

Encoder require_encoder(const RunConfig& cfg) {
  if (cfg.paths.encoder.empty()) throw ConfigError("an encoder checkpoint is required (paths.encoder)");
  auto path = resolve_checkpoint_path(cfg.paths.encoder);
  if (!fs::exists(path)) throw ConfigError("encoder checkpoint not found: " + cfg.paths.encoder);
  return load_encoder(path);
}

torch::Tensor require_images(const std::string& dir, const char* what, const RunConfig& cfg, int64_t channels) {
  if (dir.empty()) throw ConfigError(std::string("an image directory is required (") + what + ")");
  if (!fs::is_directory(dir)) throw ConfigError(std::string(what) + " directory not found: " + dir);
  return load_image_dir(dir, cfg.resolution, channels);
}

torch::Tensor synthesize_chunked(const Generator& g, const ExtendedLatent& codes) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < codes.batch(); i += kChunk) {
    auto rows = codes.rows().slice(0, i, std::min(i + kChunk, codes.batch()));
    parts.push_back(g.synthesize(ExtendedLatent(rows)).images);
  }
  return torch::cat(parts);
}

// Encode every input photo and decode it with `decoder`; outputs keep the input file stems.
void encode_decode(const RunConfig& cfg, const char* stage, std::ostream& log) {
  auto out = prepare_out(cfg);
  JsonLog jlog(out);
  auto decoder = require_decoder(cfg);
  auto encoder = require_encoder(cfg);
  if (encoder.config().resolution != decoder.resolution() || encoder.layers() != decoder.layers() ||
      encoder.config().latent_dim != decoder.latent_dim()) {
    throw ConfigError("encoder and decoder checkpoints disagree on resolution or latent shape");
  }
  if (cfg.paths.dataset.empty()) throw ConfigError("input photos are required (paths.dataset)");
  const auto files = list_images(cfg.paths.dataset);
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < files.size(); i += kChunk) {
    std::vector<torch::Tensor> batch;
    for (size_t k = i; k < std::min(files.size(), i + kChunk); ++k) {
      batch.push_back(load_image(files[k], cfg.resolution, decoder.config().image_channels));
    }
    auto images = decoder.synthesize(encoder.encode(torch::stack(batch))).images;
    for (size_t k = 0; k < batch.size(); ++k) {
      write_png(out / (files[i + k].stem().string() + ".png"), images[static_cast<int64_t>(k)]);
    }
  }
  jlog.write(stage, {{"inputs", files.size()}, {"resolution", decoder.resolution()}});
  log << stage << ": wrote " << files.size() << " images to " << out.string() << '\n';
}

}  // namespace

void cmd_sample(const RunConfig& cfg, std::ostream& log) {
  auto out = prepare_out(cfg);
  JsonLog jlog(out);
  auto decoder = require_decoder(cfg);
  const auto count = cfg.sample_count;
  if (count > 0) {
    auto codes = extend_repeat(sample_z(count, cfg.seed, decoder.latent_dim()), decoder.layers());
    if (!codes.is_repeat_extended(0.0)) throw NumericFailure("sampled codes are not repeat-extended");
    auto images = synthesize_chunked(decoder, codes);
    write_images(out / "samples", images, "sample");
    if (cfg.write_grid) write_png(out / "grid.png", make_grid(images));
  }
  jlog.write("sample", {{"count", count}, {"seed", cfg.seed}, {"layers", decoder.layers()}});
  log << "sample: wrote " << count << " images to " << out.string() << '\n';
}

void cmd_invert(const RunConfig& cfg, std::ostream& log) { encode_decode(cfg, "invert", log); }

void cmd_stylize(const RunConfig& cfg, std::ostream& log) { encode_decode(cfg, "stylize", log); }

void cmd_adapt(const RunConfig& cfg, std::ostream& log) {
  auto source = require_decoder(cfg);
  auto targets = require_images(cfg.paths.dataset, "paths.dataset", cfg, source.config().image_channels);
  AdaptationConfig acfg = cfg.adaptation;
  acfg.seed = cfg.seed;
  if (targets.size(0) < 1) throw InvalidData("no target images found in " + cfg.paths.dataset);
  if (targets.size(0) > acfg.max_target_images) {
    if (!cfg.allow_more_targets) {
      throw InvalidArgument(std::to_string(targets.size(0)) + " target images exceed the few-shot limit of " +
                            std::to_string(acfg.max_target_images) + " (set allow_more_targets to override)");
    }
    acfg.max_target_images = targets.size(0);
  }
  auto out = prepare_out(cfg);
  JsonLog jlog(out);
  auto backbone = load_backbone(cfg.backbone, source.config().image_channels);
  const auto preview = extend_repeat(sample_z(16, cfg.seed, source.latent_dim()), source.layers());

  std::ofstream curve(out / "losses.csv");
  curve << "step,adv,cdt,kl_adain,total,d_loss\n";
  curve.precision(9);
  AdaptationHooks hooks;
  hooks.on_step = [&](const LossRecord& r) {
    curve << r.step << ',' << r.adv << ',' << r.cdt << ',' << r.kl_adain << ',' << r.total << ',' << r.d_loss << '\n';
    jlog.write("adapt_step", to_json(r));
  };
  hooks.on_checkpoint = [&](int64_t step, const Generator& g) {
    char name[48];
    std::snprintf(name, sizeof(name), "decoder_%06lld.ckpt", static_cast<long long>(step));
    fs::create_directories(out / "checkpoints");
    save_generator(out / "checkpoints" / name, g);
  };
  hooks.on_samples = [&](int64_t step, const Generator& g) {
    char name[48];
    std::snprintf(name, sizeof(name), "grid_%06lld.png", static_cast<long long>(step));
    fs::create_directories(out / "samples");
    write_png(out / "samples" / name, make_grid(synthesize_chunked(g, preview)));
  };
  log << "adapt: " << targets.size(0) << " targets, " << acfg.iterations << " iterations, lambda_cdt "
      << acfg.lambda_cdt << '\n';
  auto adapted = adapt(source, targets, acfg, *backbone, hooks);
  save_generator(out / "decoder.ckpt", adapted);
  write_png(out / "grid.png", make_grid(synthesize_chunked(adapted, preview)));
  jlog.write("adapt_done", {{"iterations", acfg.iterations}, {"targets", targets.size(0)}});
  log << "adapt: wrote " << (out / "decoder.ckpt").string() << '\n';
}

void cmd_train_encoder(const RunConfig& cfg, std::ostream& log) {
  auto decoder = require_decoder(cfg);
  auto photos = require_images(cfg.paths.dataset, "paths.dataset", cfg, decoder.config().image_channels);
  if (photos.size(0) < 1) throw InvalidData("no training photos found in " + cfg.paths.dataset);
  auto out = prepare_out(cfg);
  JsonLog jlog(out);
  const auto decoder_path = resolve_checkpoint_path(cfg.paths.decoder);
  const auto before = tensor_checksum(decoder.parameters());

  EncoderArchConfig arch = cfg.encoder_arch;
  arch.resolution = decoder.resolution();
  arch.image_channels = decoder.config().image_channels;
  arch.latent_dim = decoder.latent_dim();
  EncoderConfig ecfg = cfg.encoder;
  ecfg.seed = cfg.seed;

  ReconstructionCriteria criteria;
  criteria.backbone = load_backbone(cfg.backbone, arch.image_channels);
  criteria.embedder = std::make_shared<ToyIdentityEmbedder>(arch.image_channels);
  EncoderHooks hooks;
  hooks.on_step = [&](const EncoderLogRecord& r) { jlog.write("encoder_step", to_json(r)); };
  hooks.on_checkpoint = [&](int64_t step, const Encoder& e) {
    char name[48];
    std::snprintf(name, sizeof(name), "encoder_%06lld.ckpt", static_cast<long long>(step));
    fs::create_directories(out / "checkpoints");
    save_encoder(out / "checkpoints" / name, e);
  };
  log << "train-encoder: " << photos.size(0) << " photos, " << ecfg.stage1_iterations << " + "
      << ecfg.dual_path_iterations << " iterations\n";
  auto encoder = train_encoder(photos, decoder, ecfg, arch, criteria, hooks);
  save_encoder(out / "encoder.ckpt", encoder);
  const auto after = tensor_checksum(decoder.parameters());
  if (before != after) throw NumericFailure("decoder parameters changed during encoder training");
  jlog.write("encoder_done", {{"decoder", decoder_path.string()}, {"decoder_checksum", after}});
  log << "train-encoder: wrote " << (out / "encoder.ckpt").string() << '\n';
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  auto wants = [&](const std::string& m) { return std::find(cfg.metrics.begin(), cfg.metrics.end(), m) != cfg.metrics.end(); };
  std::vector<std::string> missing;
  if (cfg.paths.generated.empty()) missing.push_back("all metrics (paths.generated)");
  if (wants("fid") && cfg.paths.reference.empty()) missing.push_back("fid (paths.reference)");
  if (wants("lpips_distance") && cfg.paths.inputs.empty()) missing.push_back("lpips_distance (paths.inputs)");
  if (wants("lpips_cluster") && cfg.paths.training.empty()) missing.push_back("lpips_cluster (paths.training)");
  if (!missing.empty()) {
    std::string msg = "missing reference set for:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigError(msg);
  }
  const int64_t channels = cfg.generator.image_channels;
  auto generated = require_images(cfg.paths.generated, "paths.generated", cfg, channels);
  auto backbone = load_backbone(cfg.backbone, channels);
  const auto weights = PerceptualWeights::unit(backbone->tap_count());

  MetricsReport report;
  report.counts["generated"] = generated.size(0);
  if (wants("fid")) {
    auto reference = require_images(cfg.paths.reference, "paths.reference", cfg, channels);
    report.counts["reference"] = reference.size(0);
    report.fid = fid(fid_features(generated, *backbone), fid_features(reference, *backbone));
  }
  if (wants("lpips_distance")) {
    auto inputs = require_images(cfg.paths.inputs, "paths.inputs", cfg, channels);
    report.counts["inputs"] = inputs.size(0);
    report.lpips_distance_mean = lpips_distance_eval(inputs, generated, *backbone, weights);
  }
  if (wants("lpips_cluster")) {
    auto training = require_images(cfg.paths.training, "paths.training", cfg, channels);
    report.counts["training"] = training.size(0);
    auto stats = lpips_cluster(generated, training, *backbone, weights);
    report.lpips_cluster_mean = stats.mean;
    report.lpips_cluster_std = stats.std;
    report.counts["clusters_with_pairs"] = stats.clusters_with_pairs;
  }
  fs::path out(cfg.paths.out);
  fs::create_directories(out);
  fs::path report_path = cfg.paths.report.empty() ? out / "report.json" : fs::path(cfg.paths.report);
  if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
  std::ofstream(report_path) << to_json(report).dump(2) << '\n';
  log << "evaluate: wrote " << report_path.string() << '\n';
}

void cmd_toy_data(const RunConfig& cfg, std::ostream& log) {
  auto out = prepare_out(cfg);
  const auto domain = cfg.toy_domain == "A" ? ToyDomain::A : ToyDomain::B;
  if (cfg.toy_count > 0) {
    auto images = toy_dataset(domain, cfg.toy_count, cfg.seed, cfg.resolution, cfg.generator.latent_dim,
                              cfg.generator.image_channels);
    write_images(out, images, "toy" + cfg.toy_domain);
  }
  log << "toy-data: wrote " << cfg.toy_count << " domain " << cfg.toy_domain << " images to " << out.string() << '\n';
}

void cmd_pretrain_toy(const RunConfig& cfg, std::ostream& log) {
  auto out = prepare_out(cfg);
  JsonLog jlog(out);
  PretrainConfig pcfg = cfg.pretrain;
  pcfg.seed = cfg.seed;
  auto g = pretrain_toy_generator(cfg.generator, pcfg, [&](int64_t step, double loss) {
    jlog.write("pretrain_step", {{"step", step}, {"loss", loss}});
  });
  save_generator(out / "decoder.ckpt", g);
  log << "pretrain-toy: wrote " << (out / "decoder.ckpt").string() << '\n';
}

int run_stage(const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (cfg.stage == "train-encoder") cmd_train_encoder(cfg, log);
    else if (cfg.stage == "adapt") cmd_adapt(cfg, log);
    else if (cfg.stage == "stylize") cmd_stylize(cfg, log);
    else if (cfg.stage == "invert") cmd_invert(cfg, log);
    else if (cfg.stage == "sample") cmd_sample(cfg, log);
    else if (cfg.stage == "evaluate") cmd_evaluate(cfg, log);
    else if (cfg.stage == "toy-data") cmd_toy_data(cfg, log);
    else if (cfg.stage == "pretrain-toy") cmd_pretrain_toy(cfg, log);
    else throw ConfigError("unknown stage '" + cfg.stage + "'");
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace ctlgan
