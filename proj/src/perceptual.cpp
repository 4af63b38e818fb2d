#include "ctlgan/perceptual.hpp"

#include "ctlgan/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ctlgan {

namespace {

std::string conv_name(size_t stage, size_t conv, const char* what) {
  return "stage" + std::to_string(stage) + ".conv" + std::to_string(conv) + "." + what;
}

}  // namespace

PerceptualWeights::PerceptualWeights(std::vector<double> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw InvalidArgument("perceptual weights must not be empty");
  bool any_positive = false;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("perceptual weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw InvalidArgument("at least one perceptual weight must be positive");
}

PerceptualWeights PerceptualWeights::unit(int64_t taps) {
  return PerceptualWeights(std::vector<double>(static_cast<size_t>(taps), 1.0));
}

PerceptualWeights PerceptualWeights::without_tap(int64_t k) const {
  if (k < 0 || k >= size()) throw InvalidArgument("tap index out of range");
  PerceptualWeights copy;
  copy.weights_ = weights_;
  copy.weights_[static_cast<size_t>(k)] = 0.0;
  return copy;
}

ConvStackBackbone::ConvStackBackbone(int64_t input_channels, std::vector<ConvStage> stages, Activation activation,
                                     uint64_t seed)
    : input_channels_(input_channels), stages_(std::move(stages)), activation_(activation) {
  if (stages_.empty()) throw InvalidArgument("backbone needs at least one stage");
  auto gen = at::detail::createCPUGenerator(seed);
  int64_t in = input_channels_;
  for (size_t s = 0; s < stages_.size(); ++s) {
    if (stages_[s].conv_channels.empty()) throw InvalidArgument("backbone stage without convolutions");
    for (size_t j = 0; j < stages_[s].conv_channels.size(); ++j) {
      const auto out = stages_[s].conv_channels[j];
      weights_f32_[conv_name(s, j, "weight")] = at::randn({out, in, 3, 3}, gen) * std::sqrt(2.0 / (9.0 * in));
      weights_f32_[conv_name(s, j, "bias")] = at::randn({out}, gen) * 0.1;
      in = out;
    }
  }
  refresh_double_copies();
}

void ConvStackBackbone::refresh_double_copies() {
  weights_f64_.clear();
  for (auto& [name, t] : weights_f32_) {
    t = t.detach().to(torch::kFloat32).contiguous();
    weights_f64_[name] = t.to(torch::kFloat64);
  }
}

std::shared_ptr<ConvStackBackbone> ConvStackBackbone::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "backbone") throw InvalidData("checkpoint kind is '" + ckpt.kind + "', expected 'backbone'");
  std::shared_ptr<ConvStackBackbone> b(new ConvStackBackbone());
  const auto& meta = ckpt.metadata;
  b->input_channels_ = meta.at("input_channels").get<int64_t>();
  b->activation_ = meta.value("activation", std::string("relu")) == "relu" ? Activation::relu : Activation::leaky_relu;
  for (const auto& s : meta.at("stages")) {
    b->stages_.push_back(ConvStage{s.at("convs").get<std::vector<int64_t>>(), s.value("stride", int64_t{1}),
                                   s.value("max_pool_before", false)});
  }
  b->load(ckpt.tensors);
  return b;
}

void ConvStackBackbone::load(const NamedTensors& tensors) {
  int64_t in = input_channels_;
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (size_t j = 0; j < stages_[s].conv_channels.size(); ++j) {
      const auto out = stages_[s].conv_channels[j];
      for (const char* what : {"weight", "bias"}) {
        const auto name = conv_name(s, j, what);
        auto it = tensors.find(name);
        if (it == tensors.end()) throw InvalidData("backbone checkpoint is missing '" + name + "'");
        const std::vector<int64_t> expected =
            std::string(what) == "weight" ? std::vector<int64_t>{out, in, 3, 3} : std::vector<int64_t>{out};
        if (it->second.sizes().vec() != expected) throw InvalidData("backbone tensor '" + name + "' has wrong shape");
        weights_f32_[name] = it->second.to(torch::kFloat32);
      }
      in = out;
    }
  }
  for (const char* name : {"input.shift", "input.scale"}) {
    if (auto it = tensors.find(name); it != tensors.end()) weights_f32_[name] = it->second.to(torch::kFloat32);
  }
  refresh_double_copies();
}

Checkpoint ConvStackBackbone::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "backbone";
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : stages_) {
    stages.push_back({{"convs", s.conv_channels}, {"stride", s.first_stride}, {"max_pool_before", s.max_pool_before}});
  }
  ckpt.metadata = {{"input_channels", input_channels_},
                   {"activation", activation_ == Activation::relu ? "relu" : "leaky_relu"},
                   {"stages", stages}};
  ckpt.tensors = weights_f32_;
  return ckpt;
}

std::vector<torch::Tensor> ConvStackBackbone::features(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != input_channels_) {
    throw InvalidArgument("backbone expects [B, " + std::to_string(input_channels_) + ", H, W] images");
  }
  const bool dbl = images.scalar_type() == torch::kFloat64;
  const auto& w = dbl ? weights_f64_ : weights_f32_;
  auto x = dbl ? images : images.to(torch::kFloat32);
  if (auto it = w.find("input.shift"); it != w.end()) {
    x = (x - it->second.view({1, -1, 1, 1})) / w.at("input.scale").view({1, -1, 1, 1});
  }
  std::vector<torch::Tensor> taps;
  taps.reserve(stages_.size());
  for (size_t s = 0; s < stages_.size(); ++s) {
    const auto& stage = stages_[s];
    if (stage.max_pool_before && x.size(2) >= 2 && x.size(3) >= 2) x = torch::max_pool2d(x, {2, 2});
    for (size_t j = 0; j < stage.conv_channels.size(); ++j) {
      const int64_t stride = j == 0 ? stage.first_stride : 1;
      x = torch::conv2d(x, w.at(conv_name(s, j, "weight")), w.at(conv_name(s, j, "bias")), stride, 1);
      x = activation_ == Activation::relu ? torch::relu(x) : torch::leaky_relu(x, 0.2);
    }
    taps.push_back(x);
  }
  return taps;
}

std::vector<int64_t> ConvStackBackbone::tap_channels() const {
  std::vector<int64_t> out;
  for (const auto& s : stages_) out.push_back(s.conv_channels.back());
  return out;
}

std::shared_ptr<ConvStackBackbone> make_toy_backbone(int64_t image_channels, uint64_t seed) {
  std::vector<ConvStage> stages = {
      {{8}, 1, false}, {{16}, 2, false}, {{16}, 2, false}, {{32}, 2, false}, {{32}, 1, false}};
  return std::make_shared<ConvStackBackbone>(image_channels, std::move(stages), Activation::leaky_relu, seed);
}

torch::Tensor normalize_channels(const torch::Tensor& features) {
  auto norm = torch::sqrt(features.pow(2).sum(1, /*keepdim=*/true));
  return features / (norm + 1e-10);
}

torch::Tensor lpips_from_features(const std::vector<torch::Tensor>& fx, const std::vector<torch::Tensor>& fy,
                                  const PerceptualWeights& weights) {
  if (fx.size() != fy.size() || static_cast<int64_t>(fx.size()) != weights.size()) {
    throw InvalidArgument("lpips: tap count mismatch between features and weights");
  }
  torch::Tensor total;
  for (size_t k = 0; k < fx.size(); ++k) {
    if (fx[k].sizes() != fy[k].sizes()) throw InvalidArgument("lpips: feature shape mismatch");
    if (weights[static_cast<int64_t>(k)] == 0.0) continue;
    auto d = (normalize_channels(fx[k]) - normalize_channels(fy[k])).pow(2).sum(1).mean({1, 2});
    auto term = d * weights[static_cast<int64_t>(k)];
    total = total.defined() ? total + term : term;
  }
  return total.defined() ? total : torch::zeros({fx.front().size(0)}, fx.front().options());
}

torch::Tensor pairwise_lpips(const std::vector<torch::Tensor>& fa, const std::vector<torch::Tensor>& fb,
                             const PerceptualWeights& weights) {
  if (fa.size() != fb.size() || static_cast<int64_t>(fa.size()) != weights.size()) {
    throw InvalidArgument("pairwise_lpips: tap count mismatch");
  }
  torch::Tensor total;
  for (size_t k = 0; k < fa.size(); ++k) {
    if (weights[static_cast<int64_t>(k)] == 0.0) continue;
    auto na = normalize_channels(fa[k]).unsqueeze(1);
    auto nb = normalize_channels(fb[k]).unsqueeze(0);
    auto d = (na - nb).pow(2).sum(2).mean({2, 3}) * weights[static_cast<int64_t>(k)];
    total = total.defined() ? total + d : d;
  }
  return total.defined() ? total : torch::zeros({fa.front().size(0), fb.front().size(0)}, fa.front().options());
}

torch::Tensor lpips(const torch::Tensor& x, const torch::Tensor& y, const FeatureBackbone& backbone,
                    const PerceptualWeights& weights) {
  if (x.sizes() != y.sizes()) throw InvalidArgument("lpips: image batches differ in shape");
  if (weights.size() != backbone.tap_count()) throw InvalidArgument("lpips: one weight per backbone tap required");
  return lpips_from_features(backbone.features(x), backbone.features(y), weights);
}

PerceptualWeights modified_weights(const FeatureBackbone& backbone, const PerceptualWeights& weights) {
  if (backbone.tap_count() < 5) throw InvalidArgument("modified LPIPS needs a backbone with at least 5 taps");
  return weights.without_tap(kOmittedTap - 1);
}

torch::Tensor modified_lpips(const torch::Tensor& x, const torch::Tensor& y, const FeatureBackbone& backbone,
                             const PerceptualWeights& weights) {
  return lpips(x, y, backbone, modified_weights(backbone, weights));
}

ToyIdentityEmbedder::ToyIdentityEmbedder(int64_t image_channels, int64_t pool_size, int64_t dim, uint64_t seed)
    : pool_size_(pool_size) {
  auto gen = at::detail::createCPUGenerator(seed);
  const auto in = image_channels * pool_size * pool_size;
  projection_f32_ = at::randn({in, dim}, gen) / std::sqrt(double(in));
  projection_f64_ = projection_f32_.to(torch::kFloat64);
}

torch::Tensor ToyIdentityEmbedder::embed(const torch::Tensor& images) const {
  if (images.dim() != 4) throw InvalidArgument("identity embedder expects [B, C, H, W] images");
  const bool dbl = images.scalar_type() == torch::kFloat64;
  auto pooled = torch::adaptive_avg_pool2d(dbl ? images : images.to(torch::kFloat32), {pool_size_, pool_size_});
  const auto& proj = dbl ? projection_f64_ : projection_f32_;
  if (pooled.size(1) * pool_size_ * pool_size_ != proj.size(0)) {
    throw InvalidArgument("identity embedder channel count mismatch");
  }
  auto raw = pooled.flatten(1).matmul(proj);
  auto norm = raw.norm(2, 1, /*keepdim=*/true);
  if (norm.min().item<double>() <= 1e-12) throw NumericFailure("identity embedding has zero norm");
  return raw / norm;
}

torch::Tensor identity_distance(const torch::Tensor& x, const torch::Tensor& y, const IdentityEmbedder& embedder) {
  if (x.sizes() != y.sizes()) throw InvalidArgument("identity_distance: image batches differ in shape");
  return 1.0 - (embedder.embed(x) * embedder.embed(y)).sum(1);
}

torch::Tensor latent_regularizer(const torch::Tensor& zplus_rows) { return zplus_rows.pow(2).mean(); }

}  // namespace ctlgan
