#pragma once

#include "ctlgan/checkpoint.hpp"
#include "ctlgan/latent.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace ctlgan {

/// Per-tap nonnegative weights; at least one must be positive.
class PerceptualWeights {
 public:
  explicit PerceptualWeights(std::vector<double> weights);
  static PerceptualWeights unit(int64_t taps);

  const std::vector<double>& values() const { return weights_; }
  int64_t size() const { return static_cast<int64_t>(weights_.size()); }
  double operator[](int64_t k) const { return weights_[static_cast<size_t>(k)]; }
  /// Copy with weight `k` (0-based) set to zero. The result may be all-zero.
  PerceptualWeights without_tap(int64_t k) const;

 private:
  PerceptualWeights() = default;
  std::vector<double> weights_;
};

/// Image -> ordered feature taps. Tap order is fixed per backbone; output is deterministic.
/// Implementations are immutable after construction and safe for concurrent callers.
class FeatureBackbone {
 public:
  virtual ~FeatureBackbone() = default;
  /// images: [B, C, H, W] in [-1, 1], float32 or float64. Returns one [B, C_k, H_k, W_k]
  /// tensor per tap, in the input's dtype, differentiable w.r.t. the input.
  virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
  virtual std::vector<int64_t> tap_channels() const = 0;
  virtual int64_t input_channels() const = 0;
  int64_t tap_count() const { return static_cast<int64_t>(tap_channels().size()); }
};

/// One stage of a convolutional backbone. The stage's tap is the activation after its last conv.
struct ConvStage {
  std::vector<int64_t> conv_channels;  // output channels of each 3x3 conv in the stage
  int64_t first_stride = 1;            // stride of the stage's first conv
  bool max_pool_before = false;        // 2x2 max pool ahead of the stage (VGG style)
};

enum class Activation { relu, leaky_relu };

/// Plain conv stack. Serves both as the seeded toy backbone used by tests and as the adapter for
/// externally converted classifier weights. Tensor naming contract for imports:
///   stage{k}.conv{j}.weight  [out, in, 3, 3]
///   stage{k}.conv{j}.bias    [out]
///   input.shift, input.scale [C] (optional; applied as (x - shift) / scale)
class ConvStackBackbone final : public FeatureBackbone {
 public:
  ConvStackBackbone(int64_t input_channels, std::vector<ConvStage> stages, Activation activation, uint64_t seed);

  /// Loads a "backbone" checkpoint whose metadata lists the stages
  /// ({"input_channels", "activation", "stages": [{"convs": [...], "stride": s, "max_pool_before": b}]}).
  static std::shared_ptr<ConvStackBackbone> from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint() const;

  std::vector<torch::Tensor> features(const torch::Tensor& images) const override;
  std::vector<int64_t> tap_channels() const override;
  int64_t input_channels() const override { return input_channels_; }

 private:
  ConvStackBackbone() = default;
  void load(const NamedTensors& tensors);
  void refresh_double_copies();

  int64_t input_channels_ = 3;
  std::vector<ConvStage> stages_;
  Activation activation_ = Activation::leaky_relu;
  NamedTensors weights_f32_;
  NamedTensors weights_f64_;
};

/// The five-tap seeded random backbone used by tests and desk-scale metrics.
std::shared_ptr<ConvStackBackbone> make_toy_backbone(int64_t image_channels, uint64_t seed = 1234);

/// Channel-wise unit normalization of a [B, C, H, W] feature map (eps 1e-10).
torch::Tensor normalize_channels(const torch::Tensor& features);

/// Per-sample LPIPS from precomputed taps: sum_k w_k * mean_{h,w} ||n(fx_k) - n(fy_k)||^2.
torch::Tensor lpips_from_features(const std::vector<torch::Tensor>& fx, const std::vector<torch::Tensor>& fy,
                                  const PerceptualWeights& weights);

/// [Na, Nb] matrix of LPIPS distances between every feature row of `fa` and `fb`.
torch::Tensor pairwise_lpips(const std::vector<torch::Tensor>& fa, const std::vector<torch::Tensor>& fb,
                             const PerceptualWeights& weights);

/// Per-sample LPIPS distance ([B]). Nonnegative, symmetric, zero on identical inputs.
torch::Tensor lpips(const torch::Tensor& x, const torch::Tensor& y, const FeatureBackbone& backbone,
                    const PerceptualWeights& weights);

/// 1-based index of the tap dropped by modified_lpips.
inline constexpr int64_t kOmittedTap = 4;

/// LPIPS with the 4th tap weight forced to zero. Requires >= 5 taps.
torch::Tensor modified_lpips(const torch::Tensor& x, const torch::Tensor& y, const FeatureBackbone& backbone,
                             const PerceptualWeights& weights);
PerceptualWeights modified_weights(const FeatureBackbone& backbone, const PerceptualWeights& weights);

/// Image -> unit-norm embedding. Throws NumericFailure when an embedding has zero norm.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
};

/// Fixed random projection of average-pooled pixels.
class ToyIdentityEmbedder final : public IdentityEmbedder {
 public:
  ToyIdentityEmbedder(int64_t image_channels, int64_t pool_size = 8, int64_t dim = 64, uint64_t seed = 99);
  torch::Tensor embed(const torch::Tensor& images) const override;

 private:
  int64_t pool_size_;
  torch::Tensor projection_f32_;
  torch::Tensor projection_f64_;
};

/// Per-sample 1 - cos(e(x), e(y)), in [0, 2].
torch::Tensor identity_distance(const torch::Tensor& x, const torch::Tensor& y, const IdentityEmbedder& embedder);

/// Mean squared deviation of a Z+ code from zero.
torch::Tensor latent_regularizer(const torch::Tensor& zplus_rows);

}  // namespace ctlgan
