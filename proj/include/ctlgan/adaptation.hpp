#pragma once

#include "ctlgan/discriminator.hpp"
#include "ctlgan/generator.hpp"
#include "ctlgan/latent.hpp"
#include "ctlgan/perceptual.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ctlgan {

enum class CdtVariant { standard, d_plus_only, noised_cdt, in_domain };

CdtVariant parse_cdt_variant(const std::string& name);
std::string to_string(CdtVariant variant);

/// Few-shot decoder adaptation hyperparameters. Defaults follow the 10-shot cartoon recipe.
struct AdaptationConfig {
  double lambda_adv = 1.0;
  double lambda_cdt = 0.005;
  double lambda_kl_adain = 1000.0;
  double alpha = 2.0;     // triplet margin
  double w_plus = 2.0;    // weight on d+; 1.0 gives the unweighted triplet
  int64_t batch = 8;      // m, latent codes per step
  int64_t iterations = 1000;
  double learning_rate = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  int64_t anchor_count = 10;
  double anchor_sigma = 0.05;
  double r1_gamma = 10.0;
  int64_t r1_interval = 16;
  CdtVariant cdt_variant = CdtVariant::standard;
  double variant_noise_variance = 0.1;  // latent perturbation for noised_cdt / in_domain
  bool freeze_mapping = true;
  bool style_mixing = false;
  int64_t max_target_images = 10;
  int64_t discriminator_channels = 32;
  int64_t checkpoint_every = 0;  // 0 disables
  int64_t sample_every = 0;      // 0 disables
  uint64_t seed = 0;

  /// Throws InvalidArgument on m < 3, negative weights, w_plus < 1 or nonpositive learning rate.
  void validate() const;
  bool operator==(const AdaptationConfig&) const = default;
};

nlohmann::json to_json(const AdaptationConfig& config);
/// Reads the keys present in `j` on top of `base`.
AdaptationConfig adaptation_config_from_json(const nlohmann::json& j, AdaptationConfig base = {});

/// max(d_ap - d_an + alpha, 0).
double triplet_loss(double d_ap, double d_an, double alpha);

/// [m, m] modified-LPIPS distances; entry (i, j) compares source image i with target image j.
torch::Tensor distance_matrix(const torch::Tensor& source_images, const torch::Tensor& target_images,
                              const FeatureBackbone& backbone, const PerceptualWeights& weights);

/// Cross-domain triplet loss over a distance matrix:
/// mean_i max(w_plus * D[i,i] - mean_{j != i} D[i,j] + alpha, 0).
torch::Tensor cdt_loss(const torch::Tensor& distances, double alpha, double w_plus = 1.0);

/// Images needed by the triplet variants. `perturbed_target` holds G_t(z_i + delta); it may be
/// left undefined for the standard and d_plus_only forms.
struct CdtVariantInputs {
  torch::Tensor source;            // G_s(z_i)
  torch::Tensor target;            // G_t(z_i)
  torch::Tensor perturbed_target;  // G_t(z_i + delta)
};

/// standard:    cdt_loss on D(source, target)
/// d_plus_only: mean_i L_d(source_i, target_i)
/// noised_cdt:  cdt_loss with the positive replaced by perturbed_target_i
/// in_domain:   anchor target_i, positive perturbed_target_i, negatives target_j (j != i)
torch::Tensor cdt_variant_loss(CdtVariant variant, const CdtVariantInputs& inputs, const FeatureBackbone& backbone,
                               const PerceptualWeights& weights, double alpha, double w_plus);

/// Per-layer [m, m-1] log-softmax distributions over cosine similarities to the other samples.
std::vector<torch::Tensor> similarity_distributions(const AdaINInputTrace& trace);

/// sum_l mean_i KL(y_i^{s,l} || y_i^{t,l}). Needs m >= 3 and equal layer counts.
torch::Tensor kl_adain_loss(const AdaINInputTrace& trace_source, const AdaINInputTrace& trace_target);

/// Non-saturating GAN terms on raw logits.
torch::Tensor nonsaturating_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
torch::Tensor nonsaturating_g_loss(const torch::Tensor& fake_logits);

/// gamma/2 * E ||d(logits)/d(real)||^2 over both discriminator heads.
torch::Tensor r1_penalty(const DiscriminatorPair& discriminators, const torch::Tensor& real_images, double gamma);

/// A batch of latent codes and, for each, whether it was drawn from the anchor region.
struct LatentDraw {
  torch::Tensor z;  // [count, dim]
  std::vector<bool> in_anchor_region;
};

/// Fixed anchors chosen once at adaptation start. Codes drawn as anchor_k + sigma * N(0, I) are
/// scored by the image discriminator; all other codes by the patch discriminator.
class AnchorRegion {
 public:
  AnchorRegion(torch::Tensor anchors, double sigma);
  static AnchorRegion sample(int64_t count, double sigma, LatentSampler& sampler);

  /// `anchor_draws` codes from the region followed by `free_draws` unconstrained codes.
  LatentDraw draw(int64_t anchor_draws, int64_t free_draws, LatentSampler& sampler) const;

  const torch::Tensor& anchors() const { return anchors_; }
  double sigma() const { return sigma_; }

 private:
  torch::Tensor anchors_;
  double sigma_;
};

struct AdversarialLosses {
  torch::Tensor g_loss;
  torch::Tensor d_loss;
  int64_t image_scored = 0;
  int64_t patch_scored = 0;
};

struct AdversarialOptions {
  bool apply_r1 = false;
  double r1_gamma = 10.0;
  double r1_scale = 1.0;  // lazy regularization multiplier (the R1 interval)
};

/// Discriminator-side loss for already generated fakes (detached by the caller if needed).
torch::Tensor discriminator_loss(const DiscriminatorPair& discriminators, const torch::Tensor& fakes,
                                 const std::vector<bool>& in_anchor_region, const torch::Tensor& real_images,
                                 const AdversarialOptions& options);
/// Generator-side non-saturating loss with anchor-region routing.
torch::Tensor generator_adversarial_loss(const DiscriminatorPair& discriminators, const torch::Tensor& fakes,
                                         const std::vector<bool>& in_anchor_region);

/// Synthesizes G_t(z) for the draw and evaluates both adversarial losses. g_loss is
/// differentiable w.r.t. the generator; d_loss sees detached fakes.
AdversarialLosses adversarial_losses(const Generator& target, const DiscriminatorPair& discriminators,
                                     const LatentDraw& draw, const torch::Tensor& real_images,
                                     const AdversarialOptions& options = {});

/// lambda_adv * adv + lambda_cdt * cdt + lambda_kl_adain * kl. Throws NumericFailure on non-finite input.
double decoder_total_loss(double adv, double cdt, double kl_adain, const AdaptationConfig& config);
torch::Tensor decoder_total_loss(const torch::Tensor& adv, const torch::Tensor& cdt, const torch::Tensor& kl_adain,
                                 const AdaptationConfig& config);

/// One record of the adaptation loss curve.
struct LossRecord {
  int64_t step = 0;
  double adv = 0.0;
  double cdt = 0.0;
  double kl_adain = 0.0;
  double total = 0.0;
  double d_loss = 0.0;
};

nlohmann::json to_json(const LossRecord& record);

struct AdaptationHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(int64_t step, const Generator&)> on_checkpoint;
  std::function<void(int64_t step, const Generator&)> on_samples;
  /// Source-domain discriminator to start from; trained from scratch when absent.
  std::optional<DiscriminatorPair> initial_discriminators;
};

/// Adapts a copy of `source` to the 1..max_target_images `target_images` ([K, C, H, W] in [-1, 1]).
/// The source is never modified; the target's mapping network stays bitwise constant when
/// `freeze_mapping` is set.
Generator adapt(const Generator& source, const torch::Tensor& target_images, const AdaptationConfig& config,
                const FeatureBackbone& backbone, const AdaptationHooks& hooks = {});

}  // namespace ctlgan
