#include "ctlgan/encoder.hpp"

#include "ctlgan/errors.hpp"

#include <cmath>

namespace ctlgan {

void EncoderConfig::validate() const {
  for (double l : {lambda_l2, lambda_lpips, lambda_reg, lambda_iden, lambda_z_predict, lambda_path1}) {
    if (!(l >= 0.0)) throw InvalidArgument("encoder loss weights must be >= 0");
  }
  if (!(learning_rate > 0.0)) throw InvalidArgument("encoder learning rate must be positive");
  if (stage1_iterations < 0 || dual_path_iterations < 0) throw InvalidArgument("iteration counts must be >= 0");
  if (batch < 1) throw InvalidArgument("encoder batch must be >= 1");
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"lambda_l2", c.lambda_l2},
          {"lambda_lpips", c.lambda_lpips},
          {"lambda_reg", c.lambda_reg},
          {"lambda_iden", c.lambda_iden},
          {"lambda_z_predict", c.lambda_z_predict},
          {"lambda_path1", c.lambda_path1},
          {"learning_rate", c.learning_rate},
          {"stage1_iterations", c.stage1_iterations},
          {"dual_path_iterations", c.dual_path_iterations},
          {"batch", c.batch},
          {"dual_path", c.dual_path},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig c) {
  c.lambda_l2 = j.value("lambda_l2", c.lambda_l2);
  c.lambda_lpips = j.value("lambda_lpips", c.lambda_lpips);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.lambda_iden = j.value("lambda_iden", c.lambda_iden);
  c.lambda_z_predict = j.value("lambda_z_predict", c.lambda_z_predict);
  c.lambda_path1 = j.value("lambda_path1", c.lambda_path1);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.stage1_iterations = j.value("stage1_iterations", c.stage1_iterations);
  c.dual_path_iterations = j.value("dual_path_iterations", c.dual_path_iterations);
  c.batch = j.value("batch", c.batch);
  c.dual_path = j.value("dual_path", c.dual_path);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  return c;
}

torch::Tensor smooth_l1(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw InvalidArgument("smooth_l1: shape mismatch");
  auto d = a - b;
  auto ad = d.abs();
  return torch::where(ad < 1.0, 0.5 * d * d, ad - 0.5).mean();
}

Path1Terms path1_terms(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z_e,
                       const EncoderConfig& cfg, const ReconstructionCriteria& criteria) {
  if (x.sizes() != x_recon.sizes()) throw InvalidArgument("path-1 loss: reconstruction shape differs from input");
  if (!criteria.backbone || !criteria.embedder) throw InvalidArgument("path-1 loss needs a backbone and an embedder");
  const auto weights = criteria.weights.value_or(PerceptualWeights::unit(criteria.backbone->tap_count()));
  Path1Terms t;
  t.l2 = (x - x_recon).pow(2).mean();
  t.lpips = cfg.lambda_lpips > 0 ? lpips(x, x_recon, *criteria.backbone, weights).mean() : torch::zeros({}, x.options());
  t.reg = latent_regularizer(z_e);
  t.iden = cfg.lambda_iden > 0 ? identity_distance(x, x_recon, *criteria.embedder).mean() : torch::zeros({}, x.options());
  t.total = cfg.lambda_l2 * t.l2 + cfg.lambda_lpips * t.lpips + cfg.lambda_reg * t.reg + cfg.lambda_iden * t.iden;
  if (!torch::isfinite(t.total.detach()).item<bool>()) throw NumericFailure("path-1 loss is not finite");
  return t;
}

torch::Tensor path1_loss(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z_e,
                         const EncoderConfig& cfg, const ReconstructionCriteria& criteria) {
  return path1_terms(x, x_recon, z_e, cfg, criteria).total;
}

torch::Tensor path2_loss(const torch::Tensor& z_o, const torch::Tensor& z_e, const torch::Tensor& x_syn,
                         const torch::Tensor& x_recon, const EncoderConfig& cfg,
                         const ReconstructionCriteria& criteria) {
  if (z_o.sizes() != z_e.sizes()) throw InvalidArgument("path-2 loss: sampled and encoded codes differ in shape");
  return cfg.lambda_path1 * path1_loss(x_syn, x_recon, z_e, cfg, criteria) +
         cfg.lambda_z_predict * smooth_l1(z_o, z_e);
}

nlohmann::json to_json(const EncoderLogRecord& r) {
  return {{"step", r.step}, {"path", r.path}, {"l2", r.l2},         {"lpips", r.lpips},
          {"reg", r.reg},   {"iden", r.iden}, {"z_predict", r.z_predict}, {"total", r.total}};
}

namespace {

/// Clears requires_grad on a parameter set and restores the previous flags on destruction.
class FrozenParameters {
 public:
  explicit FrozenParameters(std::vector<torch::Tensor> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      flags_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FrozenParameters() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flags_[i]);
  }
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> flags_;
};

}  // namespace

EncoderTrainer::EncoderTrainer(Encoder encoder, const Generator& decoder, torch::Tensor dataset, EncoderConfig config,
                               ReconstructionCriteria criteria, EncoderHooks hooks)
    : encoder_(std::move(encoder)),
      decoder_(decoder),
      dataset_(std::move(dataset)),
      config_(config),
      criteria_(std::move(criteria)),
      hooks_(std::move(hooks)),
      sampler_(config.seed + 104729, decoder.latent_dim()) {
  config_.validate();
  if (dataset_.dim() != 4 || dataset_.size(0) < 1) throw InvalidArgument("encoder training needs a non-empty dataset");
  if (encoder_.layers() != decoder_.layers() || encoder_.config().latent_dim != decoder_.latent_dim()) {
    throw InvalidArgument("encoder output shape does not match the decoder's Z+ space");
  }
  if (dataset_.size(2) != decoder_.resolution() || encoder_.config().resolution != decoder_.resolution()) {
    throw InvalidArgument("encoder, decoder and dataset resolutions must agree");
  }
  optimizer_ = std::make_unique<torch::optim::Adam>(encoder_.parameters(), torch::optim::AdamOptions(config_.learning_rate));
}

void EncoderTrainer::finish_step(const EncoderLogRecord& record) {
  ++step_;
  if (hooks_.on_step) hooks_.on_step(record);
  if (hooks_.on_checkpoint && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
    hooks_.on_checkpoint(step_, encoder_);
  }
}

void EncoderTrainer::path1_step() {
  FrozenParameters frozen(decoder_.parameters());
  auto idx = at::randint(dataset_.size(0), {config_.batch}, sampler_.generator(), torch::TensorOptions().dtype(torch::kLong));
  auto x = dataset_.index_select(0, idx).to(decoder_.dtype());
  auto z_e = encoder_.encode(x);
  auto x_recon = decoder_.synthesize(z_e).images;
  auto terms = path1_terms(x, x_recon, z_e.rows(), config_, criteria_);
  optimizer_->zero_grad();
  terms.total.backward();
  optimizer_->step();
  finish_step({step_, "path1", terms.l2.item<double>(), terms.lpips.item<double>(), terms.reg.item<double>(),
               terms.iden.item<double>(), 0.0, terms.total.item<double>()});
}

void EncoderTrainer::path2_step() {
  FrozenParameters frozen(decoder_.parameters());
  auto z_o = extend_repeat(sampler_.sample(config_.batch), decoder_.layers()).rows().to(decoder_.dtype());
  torch::Tensor x_syn;
  {
    torch::NoGradGuard no_grad;
    x_syn = decoder_.synthesize(ExtendedLatent(z_o)).images;
  }
  auto z_e = encoder_.encode(x_syn);
  auto x_recon = decoder_.synthesize(z_e).images;
  auto terms = path1_terms(x_syn, x_recon, z_e.rows(), config_, criteria_);
  auto z_predict = smooth_l1(z_o, z_e.rows());
  auto total = config_.lambda_path1 * terms.total + config_.lambda_z_predict * z_predict;
  optimizer_->zero_grad();
  total.backward();
  optimizer_->step();
  finish_step({step_, "path2", terms.l2.item<double>(), terms.lpips.item<double>(), terms.reg.item<double>(),
               terms.iden.item<double>(), z_predict.item<double>(), total.item<double>()});
}

void EncoderTrainer::run_path1(int64_t steps) {
  for (int64_t i = 0; i < steps; ++i) path1_step();
}

void EncoderTrainer::run_dual(int64_t steps) {
  for (int64_t i = 0; i < steps; ++i) {
    if (i % 2 == 0) {
      path1_step();
    } else {
      path2_step();
    }
  }
}

Encoder train_encoder(const torch::Tensor& dataset, const Generator& decoder, const EncoderConfig& config,
                      const EncoderArchConfig& arch, const ReconstructionCriteria& criteria, const EncoderHooks& hooks) {
  config.validate();
  if (dataset.dim() != 4 || dataset.size(0) < 1) throw InvalidArgument("encoder training needs a non-empty dataset");
  EncoderTrainer trainer(Encoder(arch, config.seed), decoder, dataset, config, criteria, hooks);
  trainer.run_path1(config.stage1_iterations);
  if (config.dual_path) {
    trainer.run_dual(config.dual_path_iterations);
  } else {
    trainer.run_path1(config.dual_path_iterations);
  }
  return trainer.encoder();
}

}  // namespace ctlgan
