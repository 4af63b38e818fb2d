#pragma once

#include "ctlgan/generator.hpp"

#include <json.hpp>

#include <functional>

namespace ctlgan {

/// Procedural shape domains for desk-scale experiments. Both domains render the same content
/// (disc position, radius, hue, background tone) from the first five latent coordinates:
/// A as a shaded disc with a dark rim, B as a flat posterized disc with a light rim.
enum class ToyDomain { A, B };

/// z: [N, d] with d >= 5. Returns [N, channels, resolution, resolution] float32 in [-1, 1].
torch::Tensor render_toy(const torch::Tensor& z, ToyDomain domain, int64_t resolution, int64_t channels = 3);

/// `count` renders of latents drawn from sample_z(count, seed, latent_dim).
torch::Tensor toy_dataset(ToyDomain domain, int64_t count, uint64_t seed, int64_t resolution,
                          int64_t latent_dim = 32, int64_t channels = 3);

/// Generator shape used by the desk-scale toy runs.
GeneratorConfig toy_generator_config(int64_t resolution = 32);

struct PretrainConfig {
  int64_t steps = 1500;
  int64_t batch = 16;
  double lr = 0.01;
  uint64_t seed = 0;

  bool operator==(const PretrainConfig&) const = default;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

/// Fits a freshly initialized generator to domain A renders of its own repeat-extended inputs
/// with a pixel L2 objective. `on_step(step, loss)` is optional.
Generator pretrain_toy_generator(const GeneratorConfig& gcfg, const PretrainConfig& cfg,
                                 const std::function<void(int64_t, double)>& on_step = {});

}  // namespace ctlgan
