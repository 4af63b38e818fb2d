#pragma once

#include "ctlgan/latent.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace ctlgan {

using NamedTensors = std::map<std::string, torch::Tensor>;

struct GeneratorConfig {
  int64_t resolution = 32;
  int64_t latent_dim = kDefaultLatentDim;
  int64_t channels = 32;        // feature channels at every level
  int64_t image_channels = 3;   // 3 (RGB) or 1 (gray)
  int64_t mapping_layers = 8;   // 2..8 fully connected layers
  bool identity_mapping = false;  // linear, identity-initialized mapping (style == input row)

  bool operator==(const GeneratorConfig&) const = default;
};

/// Per-layer AdaIN style inputs captured during synthesis; entry l is a [batch, 2*channels]
/// tensor holding the per-channel scale followed by the per-channel shift.
using AdaINInputTrace = std::vector<torch::Tensor>;

struct SynthesisResult {
  torch::Tensor images;  // [batch, image_channels, resolution, resolution], values in [-1, 1]
  AdaINInputTrace trace;
};

/// Instance-normalizes every channel of `feature` ([B, C, H, W]) with eps 1e-5, then applies
/// the per-sample scale/shift packed in `style_input` ([B, 2C]: scales then shifts).
torch::Tensor adain(const torch::Tensor& feature, const torch::Tensor& style_input);

inline constexpr double kInstanceNormEps = 1e-5;

namespace detail {
struct GeneratorNetImpl;
}

/// Style-based decoder: a mapping MLP applied row-wise to Z+ codes, then a pyramid of
/// upsample + conv blocks each modulated by one AdaIN layer, finished by a 1x1 conv and tanh.
///
/// Copying a Generator deep-copies its parameters. Evaluation is deterministic; per-pixel
/// noise inputs exist but contribute nothing unless noise is explicitly requested.
class Generator {
 public:
  Generator(const GeneratorConfig& config, uint64_t seed);
  Generator(const Generator& other);
  Generator& operator=(const Generator& other);
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;
  ~Generator();

  const GeneratorConfig& config() const { return config_; }
  int64_t resolution() const { return config_.resolution; }
  int64_t layers() const { return layers_; }
  int64_t latent_dim() const { return config_.latent_dim; }

  bool mapping_frozen() const { return mapping_frozen_; }
  /// Freezing also clears requires_grad on the mapping parameters.
  void set_mapping_frozen(bool frozen);

  /// Maps every row of `zp` independently; returns [batch, n, latent_dim] style vectors.
  torch::Tensor map_to_style(const ExtendedLatent& zp) const;

  SynthesisResult synthesize(const ExtendedLatent& zp) const;
  /// Same as synthesize() but adds per-layer noise drawn from `noise`.
  SynthesisResult synthesize_with_noise(const ExtendedLatent& zp, torch::Generator& noise) const;
  /// Synthesis from precomputed per-layer styles ([batch, n, latent_dim]).
  SynthesisResult synthesize_from_styles(const torch::Tensor& styles, torch::Generator* noise = nullptr) const;

  std::vector<torch::Tensor> mapping_parameters() const;
  std::vector<torch::Tensor> synthesis_parameters() const;
  /// Synthesis parameters, plus the mapping parameters unless the mapping is frozen.
  std::vector<torch::Tensor> trainable_parameters() const;
  std::vector<torch::Tensor> parameters() const;

  /// Enables or disables gradients on every parameter (mapping stays frozen if flagged).
  void set_requires_grad(bool enabled);

  NamedTensors named_tensors() const;
  /// Weight-import hook: copies tensors by name. Every generator tensor must be present
  /// with a matching shape; extra names are rejected.
  void load_named_tensors(const NamedTensors& tensors);

  void to(torch::Dtype dtype);
  torch::Dtype dtype() const;

 private:
  GeneratorConfig config_;
  int64_t layers_;
  bool mapping_frozen_ = false;
  std::shared_ptr<detail::GeneratorNetImpl> net_;
};

/// Deep copy of `source` with the mapping network frozen.
Generator clone_for_adaptation(const Generator& source);

/// FNV-1a hash over the raw bytes of the given tensors, in order.
uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors);

/// True when every element of every tensor is finite.
bool all_finite(const std::vector<torch::Tensor>& tensors);

}  // namespace ctlgan
