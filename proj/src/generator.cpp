#include "ctlgan/generator.hpp"

#include "ctlgan/errors.hpp"
#include "module_names.hpp"

#include <cmath>
#include <cstring>

namespace ctlgan {

torch::Tensor adain(const torch::Tensor& feature, const torch::Tensor& style_input) {
  if (feature.dim() != 4 || style_input.dim() != 2 || style_input.size(0) != feature.size(0) ||
      style_input.size(1) != 2 * feature.size(1)) {
    throw InvalidArgument("adain expects feature [B, C, H, W] and style [B, 2C]");
  }
  const int64_t channels = feature.size(1);
  auto mean = feature.mean({2, 3}, /*keepdim=*/true);
  auto var = (feature - mean).pow(2).mean({2, 3}, /*keepdim=*/true);
  auto normalized = (feature - mean) / torch::sqrt(var + kInstanceNormEps);
  auto scale = style_input.slice(1, 0, channels).unsqueeze(-1).unsqueeze(-1);
  auto shift = style_input.slice(1, channels, 2 * channels).unsqueeze(-1).unsqueeze(-1);
  return normalized * scale + shift;
}

namespace detail {

struct GeneratorNetImpl : torch::nn::Module {
  GeneratorConfig cfg;
  int64_t layers;
  std::vector<torch::Tensor> map_w, map_b;
  torch::Tensor const_input;
  std::vector<torch::Tensor> conv_w, conv_b, noise_strength, affine_w, affine_b;
  torch::Tensor rgb_w, rgb_b;
  // Weights are stored with unit variance and scaled by their He constant at run time.
  double map_gain, conv_gain, affine_gain, rgb_gain;

  GeneratorNetImpl(const GeneratorConfig& c, uint64_t seed) : cfg(c), layers(layer_count(c.resolution)) {
    if (c.mapping_layers < 1) throw InvalidArgument("mapping network needs at least one layer");
    if (c.channels < 1 || c.latent_dim < 1) throw InvalidArgument("generator sizes must be positive");
    if (c.image_channels != 1 && c.image_channels != 3) throw InvalidArgument("image_channels must be 1 or 3");

    auto gen = at::detail::createCPUGenerator(seed);
    auto randn = [&](at::IntArrayRef shape, double std) { return at::randn(shape, gen) * std; };
    const auto d = c.latent_dim;
    const auto ch = c.channels;
    map_gain = c.identity_mapping ? 1.0 : std::sqrt(2.0 / d);
    conv_gain = std::sqrt(2.0 / (9.0 * ch));
    affine_gain = 1.0 / std::sqrt(double(d));
    rgb_gain = 1.0 / std::sqrt(double(ch));

    for (int64_t i = 0; i < c.mapping_layers; ++i) {
      auto w = c.identity_mapping ? torch::eye(d) : randn({d, d}, 1.0);
      map_w.push_back(register_parameter(detail::registered_name("mapping.fc" + std::to_string(i) + ".weight"), w));
      map_b.push_back(register_parameter(detail::registered_name("mapping.fc" + std::to_string(i) + ".bias"), torch::zeros({d})));
    }
    const_input = register_parameter(detail::registered_name("synthesis.const"), randn({1, ch, 4, 4}, 1.0));
    for (int64_t l = 0; l < layers; ++l) {
      const auto prefix = "synthesis.layer" + std::to_string(l) + ".";
      conv_w.push_back(register_parameter(detail::registered_name(prefix + "conv.weight"), randn({ch, ch, 3, 3}, 1.0)));
      conv_b.push_back(register_parameter(detail::registered_name(prefix + "conv.bias"), torch::zeros({ch})));
      noise_strength.push_back(register_parameter(detail::registered_name(prefix + "noise_strength"), torch::zeros({1})));
      affine_w.push_back(register_parameter(detail::registered_name(prefix + "affine.weight"), randn({2 * ch, d}, 1.0)));
      auto bias = torch::cat({torch::ones({ch}), torch::zeros({ch})});
      affine_b.push_back(register_parameter(detail::registered_name(prefix + "affine.bias"), bias));
    }
    rgb_w = register_parameter(detail::registered_name("synthesis.to_rgb.weight"), randn({c.image_channels, ch, 1, 1}, 1.0));
    rgb_b = register_parameter(detail::registered_name("synthesis.to_rgb.bias"), torch::zeros({c.image_channels}));
  }

  torch::Tensor map(const torch::Tensor& rows) {
    auto h = rows;
    for (size_t i = 0; i < map_w.size(); ++i) {
      h = torch::nn::functional::linear(h, map_w[i] * map_gain, map_b[i]);
      if (!cfg.identity_mapping) h = torch::leaky_relu(h, 0.2);
    }
    return h;
  }

  SynthesisResult synthesize(const torch::Tensor& styles, torch::Generator* noise) {
    const auto batch = styles.size(0);
    SynthesisResult out;
    out.trace.reserve(layers);
    auto x = const_input.expand({batch, -1, -1, -1});
    for (int64_t l = 0; l < layers; ++l) {
      if (l >= 2 && l % 2 == 0) {
        x = torch::nn::functional::interpolate(
            x, torch::nn::functional::InterpolateFuncOptions()
                   .scale_factor(std::vector<double>{2.0, 2.0})
                   .mode(torch::kBilinear)
                   .align_corners(false));
      }
      x = torch::conv2d(x, conv_w[l] * conv_gain, conv_b[l], 1, 1);
      if (noise != nullptr) {
        auto n = at::randn({batch, 1, x.size(2), x.size(3)}, *noise).to(x.dtype());
        x = x + noise_strength[l] * n;
      }
      auto style_input = torch::nn::functional::linear(styles.select(1, l), affine_w[l] * affine_gain, affine_b[l]);
      out.trace.push_back(style_input);
      x = torch::leaky_relu(adain(x, style_input), 0.2);
    }
    out.images = torch::tanh(torch::conv2d(x, rgb_w * rgb_gain, rgb_b));
    return out;
  }
};

}  // namespace detail

Generator::Generator(const GeneratorConfig& config, uint64_t seed)
    : config_(config),
      layers_(layer_count(config.resolution)),
      net_(std::make_shared<detail::GeneratorNetImpl>(config, seed)) {}

Generator::Generator(const Generator& other)
    : config_(other.config_),
      layers_(other.layers_),
      mapping_frozen_(other.mapping_frozen_),
      net_(std::make_shared<detail::GeneratorNetImpl>(other.config_, 0)) {
  torch::NoGradGuard guard;
  net_->to(other.dtype());
  auto dst = net_->named_parameters();
  for (const auto& item : other.net_->named_parameters()) {
    dst[item.key()].copy_(item.value());
    dst[item.key()].set_requires_grad(item.value().requires_grad());
  }
}

Generator& Generator::operator=(const Generator& other) {
  if (this != &other) *this = Generator(other);
  return *this;
}

Generator::~Generator() = default;

void Generator::set_mapping_frozen(bool frozen) {
  mapping_frozen_ = frozen;
  for (auto& p : net_->map_w) p.set_requires_grad(!frozen);
  for (auto& p : net_->map_b) p.set_requires_grad(!frozen);
}

torch::Tensor Generator::map_to_style(const ExtendedLatent& zp) const {
  if (zp.layers() != layers_) {
    throw InvalidArgument("Z+ code has " + std::to_string(zp.layers()) + " rows, generator expects " +
                          std::to_string(layers_));
  }
  if (zp.dim() != config_.latent_dim) throw InvalidArgument("Z+ code dimension does not match generator");
  const auto& rows = zp.rows();
  auto flat = rows.reshape({-1, rows.size(2)}).to(dtype());
  return net_->map(flat).reshape({rows.size(0), rows.size(1), -1});
}

SynthesisResult Generator::synthesize(const ExtendedLatent& zp) const {
  return synthesize_from_styles(map_to_style(zp));
}

SynthesisResult Generator::synthesize_with_noise(const ExtendedLatent& zp, torch::Generator& noise) const {
  return synthesize_from_styles(map_to_style(zp), &noise);
}

SynthesisResult Generator::synthesize_from_styles(const torch::Tensor& styles, torch::Generator* noise) const {
  if (styles.dim() != 3 || styles.size(1) != layers_ || styles.size(2) != config_.latent_dim) {
    throw InvalidArgument("styles must be [batch, n, latent_dim]");
  }
  if (!all_finite(parameters())) throw NumericFailure("generator parameters contain non-finite values");
  return net_->synthesize(styles, noise);
}

std::vector<torch::Tensor> Generator::mapping_parameters() const {
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i < net_->map_w.size(); ++i) {
    out.push_back(net_->map_w[i]);
    out.push_back(net_->map_b[i]);
  }
  return out;
}

std::vector<torch::Tensor> Generator::synthesis_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& item : net_->named_parameters()) {
    if (detail::public_name(item.key()).rfind("synthesis.", 0) == 0) out.push_back(item.value());
  }
  return out;
}

std::vector<torch::Tensor> Generator::trainable_parameters() const {
  auto out = synthesis_parameters();
  if (!mapping_frozen_) {
    auto m = mapping_parameters();
    out.insert(out.begin(), m.begin(), m.end());
  }
  return out;
}

std::vector<torch::Tensor> Generator::parameters() const { return net_->parameters(); }

void Generator::set_requires_grad(bool enabled) {
  for (auto& p : net_->parameters()) p.set_requires_grad(enabled);
  if (mapping_frozen_) set_mapping_frozen(true);
}

NamedTensors Generator::named_tensors() const {
  NamedTensors out;
  for (const auto& item : net_->named_parameters()) out.emplace(detail::public_name(item.key()), item.value().detach().clone());
  return out;
}

void Generator::load_named_tensors(const NamedTensors& tensors) {
  torch::NoGradGuard guard;
  auto params = net_->named_parameters();
  if (tensors.size() != params.size()) {
    throw InvalidArgument("generator import expects " + std::to_string(params.size()) + " tensors, got " +
                          std::to_string(tensors.size()));
  }
  for (auto& item : params) {
    auto it = tensors.find(detail::public_name(item.key()));
    if (it == tensors.end()) throw InvalidArgument("generator import is missing tensor '" + detail::public_name(item.key()) + "'");
    if (it->second.sizes() != item.value().sizes()) {
      throw InvalidArgument("generator import shape mismatch for '" + detail::public_name(item.key()) + "'");
    }
    item.value().copy_(it->second);
  }
}

void Generator::to(torch::Dtype dtype) {
  net_->to(dtype);
  // Module::to rebinds parameters; refresh the cached handles.
  auto params = net_->named_parameters();
  auto rebind = [&](std::vector<torch::Tensor>& v, const std::string& prefix, const std::string& suffix) {
    for (size_t i = 0; i < v.size(); ++i) v[i] = params[detail::registered_name(prefix + std::to_string(i) + suffix)];
  };
  rebind(net_->map_w, "mapping.fc", ".weight");
  rebind(net_->map_b, "mapping.fc", ".bias");
  rebind(net_->conv_w, "synthesis.layer", ".conv.weight");
  rebind(net_->conv_b, "synthesis.layer", ".conv.bias");
  rebind(net_->noise_strength, "synthesis.layer", ".noise_strength");
  rebind(net_->affine_w, "synthesis.layer", ".affine.weight");
  rebind(net_->affine_b, "synthesis.layer", ".affine.bias");
  net_->const_input = params[detail::registered_name("synthesis.const")];
  net_->rgb_w = params[detail::registered_name("synthesis.to_rgb.weight")];
  net_->rgb_b = params[detail::registered_name("synthesis.to_rgb.bias")];
}

torch::Dtype Generator::dtype() const { return net_->const_input.scalar_type(); }

Generator clone_for_adaptation(const Generator& source) {
  Generator copy(source);
  copy.set_mapping_frozen(true);
  return copy;
}

uint64_t tensor_checksum(const std::vector<torch::Tensor>& tensors) {
  uint64_t hash = 14695981039346656037ULL;
  for (const auto& t : tensors) {
    auto c = t.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const auto n = c.numel() * static_cast<int64_t>(c.element_size());
    for (int64_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

bool all_finite(const std::vector<torch::Tensor>& tensors) {
  for (const auto& t : tensors) {
    if (!torch::isfinite(t.detach()).all().item<bool>()) return false;
  }
  return true;
}

}  // namespace ctlgan
