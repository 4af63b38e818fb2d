#include "ctlgan/adaptation.hpp"

#include "ctlgan/errors.hpp"

#include <cmath>

namespace ctlgan {

void AdaptationConfig::validate() const {
  if (batch < 3) throw InvalidArgument("adaptation batch m must be >= 3");
  if (lambda_adv < 0 || lambda_cdt < 0 || lambda_kl_adain < 0) throw InvalidArgument("loss weights must be >= 0");
  if (!(w_plus >= 1.0)) throw InvalidArgument("w_plus must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (anchor_count < 1 || anchor_sigma < 0) throw InvalidArgument("anchor region needs >= 1 anchor and sigma >= 0");
  if (r1_interval < 1 || r1_gamma < 0) throw InvalidArgument("R1 interval must be >= 1 and gamma >= 0");
  if (max_target_images < 1) throw InvalidArgument("max_target_images must be >= 1");
  if (variant_noise_variance < 0) throw InvalidArgument("variant noise variance must be >= 0");
  if (discriminator_channels < 1) throw InvalidArgument("discriminator channels must be positive");
}

nlohmann::json to_json(const AdaptationConfig& c) {
  return {{"lambda_adv", c.lambda_adv},
          {"lambda_cdt", c.lambda_cdt},
          {"lambda_kl_adain", c.lambda_kl_adain},
          {"alpha", c.alpha},
          {"w_plus", c.w_plus},
          {"batch", c.batch},
          {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"anchor_count", c.anchor_count},
          {"anchor_sigma", c.anchor_sigma},
          {"r1_gamma", c.r1_gamma},
          {"r1_interval", c.r1_interval},
          {"cdt_variant", to_string(c.cdt_variant)},
          {"variant_noise_variance", c.variant_noise_variance},
          {"freeze_mapping", c.freeze_mapping},
          {"style_mixing", c.style_mixing},
          {"max_target_images", c.max_target_images},
          {"discriminator_channels", c.discriminator_channels},
          {"checkpoint_every", c.checkpoint_every},
          {"sample_every", c.sample_every},
          {"seed", c.seed}};
}

AdaptationConfig adaptation_config_from_json(const nlohmann::json& j, AdaptationConfig c) {
  c.lambda_adv = j.value("lambda_adv", c.lambda_adv);
  c.lambda_cdt = j.value("lambda_cdt", c.lambda_cdt);
  c.lambda_kl_adain = j.value("lambda_kl_adain", c.lambda_kl_adain);
  c.alpha = j.value("alpha", c.alpha);
  c.w_plus = j.value("w_plus", c.w_plus);
  c.batch = j.value("batch", c.batch);
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.anchor_count = j.value("anchor_count", c.anchor_count);
  c.anchor_sigma = j.value("anchor_sigma", c.anchor_sigma);
  c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
  c.r1_interval = j.value("r1_interval", c.r1_interval);
  if (j.contains("cdt_variant")) c.cdt_variant = parse_cdt_variant(j.at("cdt_variant").get<std::string>());
  c.variant_noise_variance = j.value("variant_noise_variance", c.variant_noise_variance);
  c.freeze_mapping = j.value("freeze_mapping", c.freeze_mapping);
  c.style_mixing = j.value("style_mixing", c.style_mixing);
  c.max_target_images = j.value("max_target_images", c.max_target_images);
  c.discriminator_channels = j.value("discriminator_channels", c.discriminator_channels);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.sample_every = j.value("sample_every", c.sample_every);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

ExtendedLatent make_zplus(const torch::Tensor& z, int64_t layers, bool style_mixing, LatentSampler& sampler) {
  auto zp = extend_repeat(z, layers);
  if (!style_mixing || layers < 2) return zp;
  // StyleGAN2-style mixing: with probability 0.9, rows from a random crossover onward use a second code.
  auto coin = at::rand({1}, sampler.generator()).item<double>();
  if (coin >= 0.9) return zp;
  auto crossover = at::randint(1, layers, {1}, sampler.generator()).item<int64_t>();
  auto second = extend_repeat(sampler.normal({z.size(0), z.size(1)}), layers).rows();
  auto rows = zp.rows().clone();
  rows.slice(1, crossover) = second.slice(1, crossover);
  return ExtendedLatent(rows);
}

void check_targets(const Generator& source, const torch::Tensor& targets, const AdaptationConfig& cfg) {
  if (targets.dim() != 4) throw InvalidArgument("target images must be [K, C, H, W]");
  if (targets.size(0) < 1 || targets.size(0) > cfg.max_target_images) {
    throw InvalidArgument("adaptation needs 1.." + std::to_string(cfg.max_target_images) + " target images, got " +
                          std::to_string(targets.size(0)));
  }
  if (targets.size(2) != source.resolution() || targets.size(3) != source.resolution()) {
    throw InvalidArgument("target image resolution does not match the generator resolution");
  }
  if (targets.size(1) != source.config().image_channels) {
    throw InvalidArgument("target image channel count does not match the generator");
  }
}

}  // namespace

Generator adapt(const Generator& source, const torch::Tensor& target_images, const AdaptationConfig& cfg,
                const FeatureBackbone& backbone, const AdaptationHooks& hooks) {
  cfg.validate();
  check_targets(source, target_images, cfg);

  Generator target = clone_for_adaptation(source);
  if (!cfg.freeze_mapping) target.set_mapping_frozen(false);
  target.set_requires_grad(true);
  if (cfg.iterations == 0) return target;

  DiscriminatorPair discriminators =
      hooks.initial_discriminators
          ? *hooks.initial_discriminators
          : DiscriminatorPair({source.resolution(), source.config().image_channels, cfg.discriminator_channels},
                              cfg.seed + 7919);

  LatentSampler sampler(cfg.seed, source.latent_dim());
  const auto anchors = AnchorRegion::sample(cfg.anchor_count, cfg.anchor_sigma, sampler);
  const auto weights = PerceptualWeights::unit(backbone.tap_count());
  const auto real = target_images.to(source.dtype());
  const int64_t anchor_draws = (cfg.batch + 1) / 2;
  const int64_t free_draws = cfg.batch - anchor_draws;
  const double perturb_std = std::sqrt(cfg.variant_noise_variance);

  torch::optim::Adam g_opt(target.trainable_parameters(),
                           torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.beta1, cfg.beta2}));
  torch::optim::Adam d_opt(discriminators.parameters(),
                           torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.beta1, cfg.beta2}));

  for (int64_t step = 0; step < cfg.iterations; ++step) {
    const auto draw = anchors.draw(anchor_draws, free_draws, sampler);
    const auto zp = make_zplus(draw.z, source.layers(), cfg.style_mixing, sampler);

    // Discriminator update on detached fakes, lazy R1 on the reals.
    discriminators.set_requires_grad(true);
    torch::Tensor fakes;
    {
      torch::NoGradGuard no_grad;
      fakes = target.synthesize(zp).images;
    }
    AdversarialOptions adv_opts;
    adv_opts.apply_r1 = cfg.r1_gamma > 0 && step % cfg.r1_interval == 0;
    adv_opts.r1_gamma = cfg.r1_gamma;
    adv_opts.r1_scale = static_cast<double>(cfg.r1_interval);
    auto d_loss = discriminator_loss(discriminators, fakes, draw.in_anchor_region, real, adv_opts);
    d_opt.zero_grad();
    d_loss.backward();
    d_opt.step();

    // Generator update.
    discriminators.set_requires_grad(false);
    auto out_t = target.synthesize(zp);
    SynthesisResult out_s;
    torch::Tensor perturbed;
    {
      torch::NoGradGuard no_grad;
      out_s = source.synthesize(zp);
    }
    if (cfg.cdt_variant == CdtVariant::noised_cdt || cfg.cdt_variant == CdtVariant::in_domain) {
      auto delta = perturb_std * sampler.normal({draw.z.size(0), draw.z.size(1)});
      perturbed = target.synthesize(extend_repeat(draw.z + delta, source.layers())).images;
    }
    auto adv = generator_adversarial_loss(discriminators, out_t.images, draw.in_anchor_region);

    torch::Tensor cdt, kl;
    {
      std::optional<torch::NoGradGuard> off;
      if (cfg.lambda_cdt == 0.0) off.emplace();
      cdt = cdt_variant_loss(cfg.cdt_variant, {out_s.images, out_t.images, perturbed}, backbone, weights, cfg.alpha,
                             cfg.w_plus);
    }
    {
      std::optional<torch::NoGradGuard> off;
      if (cfg.lambda_kl_adain == 0.0) off.emplace();
      kl = kl_adain_loss(out_s.trace, out_t.trace);
    }
    auto total = decoder_total_loss(adv, cdt, kl, cfg);
    g_opt.zero_grad();
    total.backward();
    g_opt.step();

    if (hooks.on_step) {
      hooks.on_step(LossRecord{step, adv.item<double>(), cdt.item<double>(), kl.item<double>(), total.item<double>(),
                               d_loss.item<double>()});
    }
    const auto done = step + 1;
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(done, target);
    }
    if (hooks.on_samples && cfg.sample_every > 0 && done % cfg.sample_every == 0) hooks.on_samples(done, target);
  }
  target.set_requires_grad(true);
  return target;
}

}  // namespace ctlgan
