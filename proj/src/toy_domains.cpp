#include "ctlgan/toy_domains.hpp"

#include "ctlgan/errors.hpp"
#include "ctlgan/latent.hpp"

#include <cmath>

namespace ctlgan {

namespace {

torch::Tensor phi(const torch::Tensor& z) { return 0.5 * (1.0 + torch::erf(z / std::sqrt(2.0))); }

torch::Tensor view4(const torch::Tensor& v) { return v.view({-1, 1, 1, 1}); }

}  // namespace

torch::Tensor render_toy(const torch::Tensor& z, ToyDomain domain, int64_t resolution, int64_t channels) {
  if (z.dim() != 2 || z.size(1) < 5) throw InvalidArgument("render_toy expects [N, d] latents with d >= 5");
  if (channels != 1 && channels != 3) throw InvalidArgument("render_toy supports 1 or 3 channels");
  torch::NoGradGuard no_grad;
  auto u = phi(z.slice(1, 0, 5).to(torch::kFloat64));
  auto cx = view4(0.3 + 0.4 * u.select(1, 0));
  auto cy = view4(0.3 + 0.4 * u.select(1, 1));
  auto radius = view4(0.16 + 0.2 * u.select(1, 2));
  auto hue = view4(u.select(1, 3));
  auto tone = view4(u.select(1, 4));

  auto opts = torch::dtype(torch::kFloat64);
  auto coords = (torch::arange(resolution, opts) + 0.5) / static_cast<double>(resolution);
  auto ys = coords.view({1, 1, resolution, 1});
  auto xs = coords.view({1, 1, 1, resolution});
  auto dist = torch::sqrt((xs - cx).pow(2) + (ys - cy).pow(2));
  auto mask = torch::sigmoid((radius - dist) / 0.02);

  auto phase = torch::tensor({0.0, 1.0 / 3.0, 2.0 / 3.0}, opts).view({1, 3, 1, 1});
  auto color = 0.5 + 0.5 * torch::cos(2.0 * M_PI * (hue - phase));
  auto backdrop = torch::tensor({0.55, 0.60, 0.75}, opts).view({1, 3, 1, 1}) * (0.6 + 0.8 * tone);
  auto ring = torch::exp(-((dist - radius) / 0.03).pow(2));

  torch::Tensor image;
  if (domain == ToyDomain::A) {
    auto shading = 0.55 + 0.45 * (1.0 - dist / radius).clamp(0.0, 1.0);
    image = backdrop * (1.0 - mask) + color * shading * mask;
    image = image * (1.0 - ring) + 0.02 * ring;
  } else {
    auto fill = torch::round(color * 2.0) / 2.0;
    image = backdrop * (1.0 - mask) + fill * mask;
    image = image * (1.0 - ring) + 0.95 * ring;
  }
  if (channels == 1) {
    image = (0.299 * image.select(1, 0) + 0.587 * image.select(1, 1) + 0.114 * image.select(1, 2)).unsqueeze(1);
  }
  return (image.clamp(0.0, 1.0) * 2.0 - 1.0).to(torch::kFloat32).contiguous();
}

torch::Tensor toy_dataset(ToyDomain domain, int64_t count, uint64_t seed, int64_t resolution, int64_t latent_dim,
                          int64_t channels) {
  return render_toy(sample_z(count, seed, latent_dim), domain, resolution, channels);
}

GeneratorConfig toy_generator_config(int64_t resolution) {
  GeneratorConfig c;
  c.resolution = resolution;
  c.latent_dim = 32;
  c.channels = 16;
  c.image_channels = 3;
  c.mapping_layers = 2;
  return c;
}

nlohmann::json to_json(const PretrainConfig& c) {
  return {{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}, {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j) {
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

Generator pretrain_toy_generator(const GeneratorConfig& gcfg, const PretrainConfig& cfg,
                                 const std::function<void(int64_t, double)>& on_step) {
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.lr <= 0.0) throw ConfigError("invalid pretraining config");
  if (gcfg.latent_dim < 5) throw ConfigError("toy pretraining needs latent_dim >= 5");
  Generator g(gcfg, cfg.seed);
  g.set_requires_grad(true);
  torch::optim::Adam opt(g.parameters(), torch::optim::AdamOptions(cfg.lr).betas({0.9, 0.99}));
  LatentSampler sampler(cfg.seed + 7919, gcfg.latent_dim);
  for (int64_t step = 0; step < cfg.steps; ++step) {
    auto z = sampler.sample(cfg.batch);
    auto target = render_toy(z, ToyDomain::A, gcfg.resolution, gcfg.image_channels);
    auto images = g.synthesize(extend_repeat(z, g.layers())).images;
    auto loss = torch::mse_loss(images, target);
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw NumericFailure("toy pretraining diverged");
    if (on_step) on_step(step, value);
  }
  g.set_requires_grad(false);
  return g;
}

}  // namespace ctlgan
