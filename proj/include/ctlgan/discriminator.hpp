#pragma once

#include "ctlgan/generator.hpp"

#include <torch/torch.h>

#include <memory>

namespace ctlgan {

struct DiscriminatorConfig {
  int64_t resolution = 32;
  int64_t image_channels = 3;
  int64_t channels = 32;
};

namespace detail {
struct DiscriminatorNetImpl;
}

/// Image-level and patch-level discriminators sharing a convolutional trunk. The patch head
/// reads an intermediate grid (8x8 for resolution >= 16, else 4x4) and emits one logit per cell;
/// the image head continues the trunk down to 4x4 and emits one logit per image.
/// Copying deep-copies the parameters.
class DiscriminatorPair {
 public:
  DiscriminatorPair(const DiscriminatorConfig& config, uint64_t seed);
  DiscriminatorPair(const DiscriminatorPair& other);
  DiscriminatorPair& operator=(const DiscriminatorPair& other);
  DiscriminatorPair(DiscriminatorPair&&) noexcept = default;
  DiscriminatorPair& operator=(DiscriminatorPair&&) noexcept = default;
  ~DiscriminatorPair();

  const DiscriminatorConfig& config() const { return config_; }

  torch::Tensor image_logits(const torch::Tensor& images) const;  // [B]
  torch::Tensor patch_logits(const torch::Tensor& images) const;  // [B, cells]

  std::vector<torch::Tensor> parameters() const;
  std::vector<torch::Tensor> image_parameters() const;  // trunk + image head
  std::vector<torch::Tensor> patch_parameters() const;  // trunk up to the patch grid + patch head
  void set_requires_grad(bool enabled);

  NamedTensors named_tensors() const;
  void load_named_tensors(const NamedTensors& tensors);

 private:
  DiscriminatorConfig config_;
  std::shared_ptr<detail::DiscriminatorNetImpl> net_;
};

}  // namespace ctlgan
