#include "ctlgan/adaptation.hpp"

#include "ctlgan/errors.hpp"

#include <cmath>

namespace ctlgan {

CdtVariant parse_cdt_variant(const std::string& name) {
  if (name == "standard" || name == "cdt") return CdtVariant::standard;
  if (name == "d_plus_only") return CdtVariant::d_plus_only;
  if (name == "noised_cdt") return CdtVariant::noised_cdt;
  if (name == "in_domain") return CdtVariant::in_domain;
  throw InvalidArgument("unknown CDT variant '" + name + "'");
}

std::string to_string(CdtVariant variant) {
  switch (variant) {
    case CdtVariant::standard: return "standard";
    case CdtVariant::d_plus_only: return "d_plus_only";
    case CdtVariant::noised_cdt: return "noised_cdt";
    case CdtVariant::in_domain: return "in_domain";
  }
  throw InvalidArgument("unknown CDT variant");
}

double triplet_loss(double d_ap, double d_an, double alpha) { return std::max(d_ap - d_an + alpha, 0.0); }

torch::Tensor distance_matrix(const torch::Tensor& source_images, const torch::Tensor& target_images,
                              const FeatureBackbone& backbone, const PerceptualWeights& weights) {
  if (source_images.sizes() != target_images.sizes()) {
    throw InvalidArgument("distance_matrix: source and target batches differ in shape");
  }
  const auto w = modified_weights(backbone, weights);
  return pairwise_lpips(backbone.features(source_images), backbone.features(target_images), w);
}

namespace {

torch::Tensor off_diagonal_row_mean(const torch::Tensor& d) {
  const auto m = d.size(0);
  return (d.sum(1) - d.diagonal()) / static_cast<double>(m - 1);
}

torch::Tensor hinge_mean(const torch::Tensor& positive, const torch::Tensor& negative, double alpha, double w_plus) {
  return torch::relu(w_plus * positive - negative + alpha).mean();
}

void check_square(const torch::Tensor& d) {
  if (d.dim() != 2 || d.size(0) != d.size(1)) throw InvalidArgument("distance matrix must be square");
  if (d.size(0) < 2) throw InvalidArgument("cross-domain triplet loss needs m >= 2");
}

}  // namespace

torch::Tensor cdt_loss(const torch::Tensor& distances, double alpha, double w_plus) {
  check_square(distances);
  return hinge_mean(distances.diagonal(), off_diagonal_row_mean(distances), alpha, w_plus);
}

torch::Tensor cdt_variant_loss(CdtVariant variant, const CdtVariantInputs& in, const FeatureBackbone& backbone,
                               const PerceptualWeights& weights, double alpha, double w_plus) {
  const auto w = modified_weights(backbone, weights);
  if (in.source.size(0) < 2) throw InvalidArgument("triplet variants need m >= 2");
  auto need_perturbed = [&] {
    if (!in.perturbed_target.defined() || in.perturbed_target.sizes() != in.target.sizes()) {
      throw InvalidArgument("variant '" + to_string(variant) + "' needs perturbed target images");
    }
  };
  switch (variant) {
    case CdtVariant::standard:
      return cdt_loss(distance_matrix(in.source, in.target, backbone, weights), alpha, w_plus);
    case CdtVariant::d_plus_only:
      return lpips_from_features(backbone.features(in.source), backbone.features(in.target), w).mean();
    case CdtVariant::noised_cdt: {
      need_perturbed();
      auto fs = backbone.features(in.source);
      auto d = pairwise_lpips(fs, backbone.features(in.target), w);
      auto positive = lpips_from_features(fs, backbone.features(in.perturbed_target), w);
      return hinge_mean(positive, off_diagonal_row_mean(d), alpha, w_plus);
    }
    case CdtVariant::in_domain: {
      need_perturbed();
      auto ft = backbone.features(in.target);
      auto d = pairwise_lpips(ft, ft, w);
      auto positive = lpips_from_features(ft, backbone.features(in.perturbed_target), w);
      return hinge_mean(positive, off_diagonal_row_mean(d), alpha, w_plus);
    }
  }
  throw InvalidArgument("unknown CDT variant");
}

std::vector<torch::Tensor> similarity_distributions(const AdaINInputTrace& trace) {
  std::vector<torch::Tensor> out;
  out.reserve(trace.size());
  for (const auto& f : trace) {
    if (f.dim() != 2) throw InvalidArgument("AdaIN trace entries must be [m, d]");
    const auto m = f.size(0);
    if (m < 3) throw InvalidArgument("KL-AdaIN needs m >= 3 samples per layer");
    auto norm = f.norm(2, 1, /*keepdim=*/true);
    if (norm.min().item<double>() <= 0.0) throw NumericFailure("AdaIN input row with zero norm");
    auto unit = f / norm;
    auto sim = unit.matmul(unit.t());
    auto mask = ~torch::eye(m, torch::TensorOptions().dtype(torch::kBool));
    out.push_back(torch::log_softmax(sim.masked_select(mask).view({m, m - 1}), 1));
  }
  return out;
}

torch::Tensor kl_adain_loss(const AdaINInputTrace& trace_source, const AdaINInputTrace& trace_target) {
  if (trace_source.size() != trace_target.size() || trace_source.empty()) {
    throw InvalidArgument("KL-AdaIN traces must have the same, nonzero layer count");
  }
  for (size_t l = 0; l < trace_source.size(); ++l) {
    if (trace_source[l].size(0) != trace_target[l].size(0)) {
      throw InvalidArgument("KL-AdaIN traces must have the same batch size");
    }
  }
  auto log_s = similarity_distributions(trace_source);
  auto log_t = similarity_distributions(trace_target);
  torch::Tensor total;
  for (size_t l = 0; l < log_s.size(); ++l) {
    auto kl = (log_s[l].exp() * (log_s[l] - log_t[l])).sum(1).mean();
    total = total.defined() ? total + kl : kl;
  }
  return total;
}

torch::Tensor nonsaturating_d_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return torch::softplus(-real_logits).mean() + torch::softplus(fake_logits).mean();
}

torch::Tensor nonsaturating_g_loss(const torch::Tensor& fake_logits) { return torch::softplus(-fake_logits).mean(); }

torch::Tensor r1_penalty(const DiscriminatorPair& discriminators, const torch::Tensor& real_images, double gamma) {
  auto real = real_images.detach().requires_grad_(true);
  auto score = discriminators.image_logits(real).sum() + discriminators.patch_logits(real).sum();
  auto grad = torch::autograd::grad({score}, {real}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
  return 0.5 * gamma * grad.pow(2).flatten(1).sum(1).mean();
}

AnchorRegion::AnchorRegion(torch::Tensor anchors, double sigma) : anchors_(std::move(anchors)), sigma_(sigma) {
  if (anchors_.dim() != 2 || anchors_.size(0) < 1) throw InvalidArgument("anchor region needs [k, dim] anchors");
  if (!(sigma_ >= 0.0)) throw InvalidArgument("anchor sigma must be >= 0");
}

AnchorRegion AnchorRegion::sample(int64_t count, double sigma, LatentSampler& sampler) {
  return AnchorRegion(sampler.sample(count), sigma);
}

LatentDraw AnchorRegion::draw(int64_t anchor_draws, int64_t free_draws, LatentSampler& sampler) const {
  if (anchor_draws < 0 || free_draws < 0 || anchor_draws + free_draws < 1) {
    throw InvalidArgument("latent draw needs a positive count");
  }
  std::vector<torch::Tensor> parts;
  LatentDraw out;
  if (anchor_draws > 0) {
    auto pick = at::randint(anchors_.size(0), {anchor_draws}, sampler.generator(),
                            torch::TensorOptions().dtype(torch::kLong));
    parts.push_back(anchors_.index_select(0, pick) + sigma_ * sampler.normal({anchor_draws, anchors_.size(1)}));
  }
  if (free_draws > 0) parts.push_back(sampler.normal({free_draws, anchors_.size(1)}));
  out.z = torch::cat(parts);
  out.in_anchor_region.assign(static_cast<size_t>(anchor_draws), true);
  out.in_anchor_region.resize(static_cast<size_t>(anchor_draws + free_draws), false);
  return out;
}

namespace {

torch::Tensor index_of(const std::vector<bool>& mask, bool value) {
  std::vector<int64_t> idx;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == value) idx.push_back(static_cast<int64_t>(i));
  }
  return torch::tensor(idx, torch::kLong);
}

}  // namespace

torch::Tensor discriminator_loss(const DiscriminatorPair& discriminators, const torch::Tensor& fakes,
                                 const std::vector<bool>& in_anchor_region, const torch::Tensor& real_images,
                                 const AdversarialOptions& options) {
  if (real_images.size(0) < 1) throw InvalidArgument("adversarial loss needs at least one real image");
  if (static_cast<int64_t>(in_anchor_region.size()) != fakes.size(0)) {
    throw InvalidArgument("routing mask size must equal the fake batch size");
  }
  auto anchored = index_of(in_anchor_region, true);
  auto free = index_of(in_anchor_region, false);
  auto loss = torch::zeros({}, fakes.options());
  if (anchored.numel() > 0) {
    loss = loss + nonsaturating_d_loss(discriminators.image_logits(real_images),
                                       discriminators.image_logits(fakes.index_select(0, anchored)));
  }
  if (free.numel() > 0) {
    loss = loss + nonsaturating_d_loss(discriminators.patch_logits(real_images),
                                       discriminators.patch_logits(fakes.index_select(0, free)));
  }
  if (options.apply_r1) loss = loss + options.r1_scale * r1_penalty(discriminators, real_images, options.r1_gamma);
  return loss;
}

torch::Tensor generator_adversarial_loss(const DiscriminatorPair& discriminators, const torch::Tensor& fakes,
                                         const std::vector<bool>& in_anchor_region) {
  if (static_cast<int64_t>(in_anchor_region.size()) != fakes.size(0)) {
    throw InvalidArgument("routing mask size must equal the fake batch size");
  }
  auto anchored = index_of(in_anchor_region, true);
  auto free = index_of(in_anchor_region, false);
  auto loss = torch::zeros({}, fakes.options());
  if (anchored.numel() > 0) loss = loss + nonsaturating_g_loss(discriminators.image_logits(fakes.index_select(0, anchored)));
  if (free.numel() > 0) loss = loss + nonsaturating_g_loss(discriminators.patch_logits(fakes.index_select(0, free)));
  return loss;
}

AdversarialLosses adversarial_losses(const Generator& target, const DiscriminatorPair& discriminators,
                                     const LatentDraw& draw, const torch::Tensor& real_images,
                                     const AdversarialOptions& options) {
  if (real_images.dim() != 4 || real_images.size(0) < 1) {
    throw InvalidArgument("adversarial loss needs a non-empty real image set");
  }
  auto fakes = target.synthesize(extend_repeat(draw.z, target.layers())).images;
  AdversarialLosses out;
  out.g_loss = generator_adversarial_loss(discriminators, fakes, draw.in_anchor_region);
  out.d_loss = discriminator_loss(discriminators, fakes.detach(), draw.in_anchor_region, real_images, options);
  for (bool a : draw.in_anchor_region) (a ? out.image_scored : out.patch_scored) += 1;
  return out;
}

double decoder_total_loss(double adv, double cdt, double kl_adain, const AdaptationConfig& config) {
  if (!std::isfinite(adv) || !std::isfinite(cdt) || !std::isfinite(kl_adain)) {
    throw NumericFailure("decoder loss component is not finite");
  }
  return config.lambda_adv * adv + config.lambda_cdt * cdt + config.lambda_kl_adain * kl_adain;
}

torch::Tensor decoder_total_loss(const torch::Tensor& adv, const torch::Tensor& cdt, const torch::Tensor& kl_adain,
                                 const AdaptationConfig& config) {
  for (const auto* t : {&adv, &cdt, &kl_adain}) {
    if (!torch::isfinite(t->detach()).all().item<bool>()) throw NumericFailure("decoder loss component is not finite");
  }
  return config.lambda_adv * adv + config.lambda_cdt * cdt + config.lambda_kl_adain * kl_adain;
}

nlohmann::json to_json(const LossRecord& r) {
  return {{"step", r.step}, {"adv", r.adv},     {"cdt", r.cdt},
          {"kl_adain", r.kl_adain}, {"total", r.total}, {"d_loss", r.d_loss}};
}

}  // namespace ctlgan
