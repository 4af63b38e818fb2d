#include "ctlgan/discriminator.hpp"

#include "ctlgan/errors.hpp"
#include "module_names.hpp"

#include <bit>
#include <cmath>

namespace ctlgan {

namespace detail {

struct DiscriminatorNetImpl : torch::nn::Module {
  DiscriminatorConfig cfg;
  int64_t patch_block = 0;  // number of trunk blocks before the patch grid
  torch::Tensor from_rgb_w, from_rgb_b;
  std::vector<torch::Tensor> block_w, block_b;
  torch::Tensor patch_w, patch_b, fc_w, fc_b, out_w, out_b;
  // Unit-variance storage, He constant applied at run time.
  double rgb_gain, block_gain, head_gain, fc_gain;

  DiscriminatorNetImpl(const DiscriminatorConfig& c, uint64_t seed) : cfg(c) {
    layer_count(c.resolution);  // validates the resolution
    auto gen = at::detail::createCPUGenerator(seed);
    auto randn = [&](at::IntArrayRef shape, double std) { return at::randn(shape, gen) * std; };
    const auto ch = c.channels;
    rgb_gain = std::sqrt(2.0 / c.image_channels);
    block_gain = std::sqrt(2.0 / (9.0 * ch));
    head_gain = 1.0 / std::sqrt(double(ch));
    fc_gain = std::sqrt(2.0 / (16.0 * ch));
    from_rgb_w = register_parameter(detail::registered_name("trunk.from_rgb.weight"), randn({ch, c.image_channels, 1, 1}, 1.0));
    from_rgb_b = register_parameter(detail::registered_name("trunk.from_rgb.bias"), torch::zeros({ch}));
    // Each block halves the resolution: res -> ... -> 4.
    const int64_t blocks = std::bit_width(static_cast<uint64_t>(c.resolution)) - 1 - 2;
    const int64_t patch_res = c.resolution >= 16 ? 8 : 4;
    for (int64_t i = 0; i < blocks; ++i) {
      const auto name = "trunk.block" + std::to_string(i);
      block_w.push_back(register_parameter(detail::registered_name(name + ".weight"), randn({ch, ch, 3, 3}, 1.0)));
      block_b.push_back(register_parameter(detail::registered_name(name + ".bias"), torch::zeros({ch})));
      if ((c.resolution >> (i + 1)) == patch_res) patch_block = i + 1;
    }
    patch_w = register_parameter(detail::registered_name("patch.head.weight"), randn({1, ch, 1, 1}, 1.0));
    patch_b = register_parameter(detail::registered_name("patch.head.bias"), torch::zeros({1}));
    fc_w = register_parameter(detail::registered_name("image.fc.weight"), randn({ch, ch * 16}, 1.0));
    fc_b = register_parameter(detail::registered_name("image.fc.bias"), torch::zeros({ch}));
    out_w = register_parameter(detail::registered_name("image.out.weight"), randn({1, ch}, 1.0));
    out_b = register_parameter(detail::registered_name("image.out.bias"), torch::zeros({1}));
  }

  torch::Tensor trunk(const torch::Tensor& images, int64_t upto) {
    auto x = torch::leaky_relu(torch::conv2d(images, from_rgb_w * rgb_gain, from_rgb_b), 0.2);
    for (int64_t i = 0; i < upto; ++i) {
      x = torch::leaky_relu(torch::conv2d(x, block_w[i] * block_gain, block_b[i], 1, 1), 0.2);
      x = torch::avg_pool2d(x, {2, 2});
    }
    return x;
  }

  torch::Tensor image_logits(const torch::Tensor& images) {
    auto x = trunk(images, static_cast<int64_t>(block_w.size()));
    x = torch::leaky_relu(torch::nn::functional::linear(x.flatten(1), fc_w * fc_gain, fc_b), 0.2);
    return torch::nn::functional::linear(x, out_w * head_gain, out_b).squeeze(1);
  }

  torch::Tensor patch_logits(const torch::Tensor& images) {
    return torch::conv2d(trunk(images, patch_block), patch_w * head_gain, patch_b).flatten(1);
  }
};

}  // namespace detail

DiscriminatorPair::DiscriminatorPair(const DiscriminatorConfig& config, uint64_t seed)
    : config_(config), net_(std::make_shared<detail::DiscriminatorNetImpl>(config, seed)) {}

DiscriminatorPair::DiscriminatorPair(const DiscriminatorPair& other)
    : config_(other.config_), net_(std::make_shared<detail::DiscriminatorNetImpl>(other.config_, 0)) {
  load_named_tensors(other.named_tensors());
}

DiscriminatorPair& DiscriminatorPair::operator=(const DiscriminatorPair& other) {
  if (this != &other) *this = DiscriminatorPair(other);
  return *this;
}

DiscriminatorPair::~DiscriminatorPair() = default;

namespace {
void check_images(const DiscriminatorConfig& cfg, const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != cfg.image_channels || images.size(2) != cfg.resolution ||
      images.size(3) != cfg.resolution) {
    throw InvalidArgument("discriminator input does not match its resolution/channels");
  }
}
}  // namespace

torch::Tensor DiscriminatorPair::image_logits(const torch::Tensor& images) const {
  check_images(config_, images);
  return net_->image_logits(images);
}

torch::Tensor DiscriminatorPair::patch_logits(const torch::Tensor& images) const {
  check_images(config_, images);
  return net_->patch_logits(images);
}

std::vector<torch::Tensor> DiscriminatorPair::parameters() const { return net_->parameters(); }

std::vector<torch::Tensor> DiscriminatorPair::image_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : net_->named_parameters()) {
    if (detail::public_name(item.key()).rfind("patch.", 0) != 0) out.push_back(item.value());
  }
  return out;
}

std::vector<torch::Tensor> DiscriminatorPair::patch_parameters() const {
  std::vector<torch::Tensor> out = {net_->from_rgb_w, net_->from_rgb_b};
  for (int64_t i = 0; i < net_->patch_block; ++i) {
    out.push_back(net_->block_w[i]);
    out.push_back(net_->block_b[i]);
  }
  out.push_back(net_->patch_w);
  out.push_back(net_->patch_b);
  return out;
}

void DiscriminatorPair::set_requires_grad(bool enabled) {
  for (auto& p : net_->parameters()) p.set_requires_grad(enabled);
}

NamedTensors DiscriminatorPair::named_tensors() const {
  NamedTensors out;
  for (const auto& item : net_->named_parameters()) out.emplace(detail::public_name(item.key()), item.value().detach().clone());
  return out;
}

void DiscriminatorPair::load_named_tensors(const NamedTensors& tensors) {
  torch::NoGradGuard guard;
  for (auto& item : net_->named_parameters()) {
    auto it = tensors.find(detail::public_name(item.key()));
    if (it == tensors.end() || it->second.sizes() != item.value().sizes()) {
      throw InvalidArgument("discriminator import: missing or mis-shaped '" + detail::public_name(item.key()) + "'");
    }
    item.value().copy_(it->second);
  }
}

}  // namespace ctlgan
