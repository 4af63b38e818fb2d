#pragma once

#include "ctlgan/checkpoint.hpp"
#include "ctlgan/generator.hpp"
#include "ctlgan/latent.hpp"
#include "ctlgan/perceptual.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace ctlgan {

enum class SubEncoderKind { transformer, linear_1, linear_8, attention };

SubEncoderKind parse_sub_encoder_kind(const std::string& name);
std::string to_string(SubEncoderKind kind);

/// Encoder architecture. The sub-encoder defaults are the full-scale transformer
/// (6 layers, 14 heads of width 64, MLP 1024, token width 512).
struct EncoderArchConfig {
  int64_t resolution = 32;
  int64_t image_channels = 3;
  int64_t latent_dim = kDefaultLatentDim;
  int64_t feature_channels = 32;
  SubEncoderKind kind = SubEncoderKind::transformer;
  int64_t token_dim = 512;
  int64_t depth = 6;
  int64_t heads = 14;
  int64_t head_dim = 64;
  int64_t mlp_dim = 1024;

  bool operator==(const EncoderArchConfig&) const = default;
};

nlohmann::json to_json(const EncoderArchConfig& config);
EncoderArchConfig encoder_arch_from_json(const nlohmann::json& j, EncoderArchConfig base = {});

/// Token slots fed by each pyramid level, following the pSp grouping (coarse rows 0-2,
/// middle rows 3-6, fine rows 7+), clamped so every level owns at least one slot.
struct TokenGroups {
  int64_t coarse_end;
  int64_t middle_end;
  int64_t layers;
};
TokenGroups token_groups(int64_t layers);

namespace detail {
struct EncoderNetImpl;
}

/// Z+ style encoder: a three-level feature pyramid (top-down lateral merge) whose pooled levels
/// are projected to one token per generator layer, refined by the sub-encoder and read out as
/// latent rows. Copying deep-copies the parameters.
class Encoder {
 public:
  Encoder(const EncoderArchConfig& config, uint64_t seed);
  Encoder(const Encoder& other);
  Encoder& operator=(const Encoder& other);
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;
  ~Encoder();

  const EncoderArchConfig& config() const { return config_; }
  int64_t layers() const { return layers_; }

  /// [B, C, R, R] images -> [B, n, latent_dim] codes. Deterministic.
  ExtendedLatent encode(const torch::Tensor& images) const;

  std::vector<torch::Tensor> parameters() const;
  NamedTensors named_tensors() const;
  void load_named_tensors(const NamedTensors& tensors);
  void to(torch::Dtype dtype);

 private:
  EncoderArchConfig config_;
  int64_t layers_;
  std::shared_ptr<detail::EncoderNetImpl> net_;
};

Checkpoint encoder_checkpoint(const Encoder& encoder);
Encoder encoder_from_checkpoint(const Checkpoint& checkpoint);
void save_encoder(const std::filesystem::path& path, const Encoder& encoder);
Encoder load_encoder(const std::filesystem::path& path);

/// Loss weights and schedule for encoder training. Defaults are the full-scale recipe weights
/// with desk-scale iteration counts.
struct EncoderConfig {
  double lambda_l2 = 1.0;
  double lambda_lpips = 0.8;
  double lambda_reg = 0.0;
  double lambda_iden = 0.1;
  double lambda_z_predict = 0.1;
  double lambda_path1 = 1.0;
  double learning_rate = 1e-4;
  int64_t stage1_iterations = 5000;
  int64_t dual_path_iterations = 2000;
  int64_t batch = 8;
  bool dual_path = true;  // false: the second phase trains path-1 only (ablation)
  int64_t checkpoint_every = 0;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig base = {});

/// Perceptual and identity models used by the reconstruction losses.
struct ReconstructionCriteria {
  std::shared_ptr<const FeatureBackbone> backbone;
  std::shared_ptr<const IdentityEmbedder> embedder;
  std::optional<PerceptualWeights> weights;  // unit weights when empty
};

/// Mean over elements of 0.5 d^2 (|d| < 1) or |d| - 0.5, with d = a - b.
torch::Tensor smooth_l1(const torch::Tensor& a, const torch::Tensor& b);

struct Path1Terms {
  torch::Tensor l2, lpips, reg, iden, total;
};

/// lambda_l2 * MSE + lambda_lpips * LPIPS + lambda_reg * L_reg(z_e) + lambda_iden * identity distance.
Path1Terms path1_terms(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z_e,
                       const EncoderConfig& config, const ReconstructionCriteria& criteria);
torch::Tensor path1_loss(const torch::Tensor& x, const torch::Tensor& x_recon, const torch::Tensor& z_e,
                         const EncoderConfig& config, const ReconstructionCriteria& criteria);

/// lambda_path1 * path1_loss(x_syn, x_recon, z_e) + lambda_z_predict * smooth_l1(z_o, z_e).
torch::Tensor path2_loss(const torch::Tensor& z_o, const torch::Tensor& z_e, const torch::Tensor& x_syn,
                         const torch::Tensor& x_recon, const EncoderConfig& config,
                         const ReconstructionCriteria& criteria);

struct EncoderLogRecord {
  int64_t step = 0;
  std::string path;  // "path1" or "path2"
  double l2 = 0, lpips = 0, reg = 0, iden = 0, z_predict = 0, total = 0;
};

nlohmann::json to_json(const EncoderLogRecord& record);

struct EncoderHooks {
  std::function<void(const EncoderLogRecord&)> on_step;
  std::function<void(int64_t step, const Encoder&)> on_checkpoint;
};

/// Stateful trainer so the two training phases can be branched from a shared stage-1 encoder.
/// The decoder is held read-only; its parameters are never updated.
class EncoderTrainer {
 public:
  EncoderTrainer(Encoder encoder, const Generator& decoder, torch::Tensor dataset, EncoderConfig config,
                 ReconstructionCriteria criteria, EncoderHooks hooks = {});

  /// Path-1 (photo reconstruction) steps.
  void run_path1(int64_t steps);
  /// Alternating path-1 / path-2 steps, starting with path-1.
  void run_dual(int64_t steps);

  const Encoder& encoder() const { return encoder_; }
  int64_t step() const { return step_; }

 private:
  void path1_step();
  void path2_step();
  void finish_step(const EncoderLogRecord& record);

  Encoder encoder_;
  const Generator& decoder_;
  torch::Tensor dataset_;
  EncoderConfig config_;
  ReconstructionCriteria criteria_;
  EncoderHooks hooks_;
  LatentSampler sampler_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  int64_t step_ = 0;
};

/// Stage 1 (path-1 only) followed by dual-path training (or more path-1 steps when
/// config.dual_path is false). `dataset` is [N, C, R, R] in [-1, 1].
Encoder train_encoder(const torch::Tensor& dataset, const Generator& decoder, const EncoderConfig& config,
                      const EncoderArchConfig& arch, const ReconstructionCriteria& criteria,
                      const EncoderHooks& hooks = {});

}  // namespace ctlgan
