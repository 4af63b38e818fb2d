#include "ctlgan/encoder.hpp"

#include "ctlgan/errors.hpp"
#include "module_names.hpp"

#include <cmath>

namespace ctlgan {

SubEncoderKind parse_sub_encoder_kind(const std::string& name) {
  if (name == "transformer") return SubEncoderKind::transformer;
  if (name == "linear_1") return SubEncoderKind::linear_1;
  if (name == "linear_8") return SubEncoderKind::linear_8;
  if (name == "attention") return SubEncoderKind::attention;
  throw InvalidArgument("unknown sub-encoder kind '" + name + "'");
}

std::string to_string(SubEncoderKind kind) {
  switch (kind) {
    case SubEncoderKind::transformer: return "transformer";
    case SubEncoderKind::linear_1: return "linear_1";
    case SubEncoderKind::linear_8: return "linear_8";
    case SubEncoderKind::attention: return "attention";
  }
  throw InvalidArgument("unknown sub-encoder kind");
}

nlohmann::json to_json(const EncoderArchConfig& c) {
  return {{"resolution", c.resolution},       {"image_channels", c.image_channels}, {"latent_dim", c.latent_dim},
          {"feature_channels", c.feature_channels}, {"kind", to_string(c.kind)},     {"token_dim", c.token_dim},
          {"depth", c.depth},                 {"heads", c.heads},                   {"head_dim", c.head_dim},
          {"mlp_dim", c.mlp_dim}};
}

EncoderArchConfig encoder_arch_from_json(const nlohmann::json& j, EncoderArchConfig c) {
  c.resolution = j.value("resolution", c.resolution);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.feature_channels = j.value("feature_channels", c.feature_channels);
  if (j.contains("kind")) c.kind = parse_sub_encoder_kind(j.at("kind").get<std::string>());
  c.token_dim = j.value("token_dim", c.token_dim);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
  return c;
}

TokenGroups token_groups(int64_t layers) {
  if (layers < 3) throw InvalidArgument("encoder needs at least 3 latent rows");
  TokenGroups g{};
  g.layers = layers;
  g.coarse_end = std::min<int64_t>(3, layers - 2);
  g.middle_end = std::min<int64_t>(7, layers - 1);
  return g;
}

namespace detail {

namespace nnf = torch::nn::functional;

/// Multi-head self-attention with an inner width of heads * head_dim (independent of the token width).
struct AttentionImpl : torch::nn::Module {
  int64_t heads, head_dim;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr};

  AttentionImpl(int64_t dim, int64_t heads_, int64_t head_dim_) : heads(heads_), head_dim(head_dim_) {
    norm = register_module(detail::registered_name("norm"), torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    qkv = register_module(detail::registered_name("qkv"), torch::nn::Linear(torch::nn::LinearOptions(dim, 3 * heads * head_dim).bias(false)));
    proj = register_module(detail::registered_name("proj"), torch::nn::Linear(heads * head_dim, dim));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    const auto b = x.size(0), t = x.size(1);
    auto parts = qkv(norm(x)).view({b, t, 3, heads, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = parts[0], k = parts[1], v = parts[2];
    auto attn = torch::softmax(q.matmul(k.transpose(-2, -1)) / std::sqrt(double(head_dim)), -1);
    auto out = attn.matmul(v).permute({0, 2, 1, 3}).reshape({b, t, heads * head_dim});
    return proj(out);
  }
};
TORCH_MODULE(Attention);

struct FeedForwardImpl : torch::nn::Module {
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

  FeedForwardImpl(int64_t dim, int64_t hidden) {
    norm = register_module(detail::registered_name("norm"), torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    fc1 = register_module(detail::registered_name("fc1"), torch::nn::Linear(dim, hidden));
    fc2 = register_module(detail::registered_name("fc2"), torch::nn::Linear(hidden, dim));
  }

  torch::Tensor forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(norm(x)))); }
};
TORCH_MODULE(FeedForward);

struct EncoderNetImpl : torch::nn::Module {
  EncoderArchConfig cfg;
  TokenGroups groups;
  torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr}, down3{nullptr};
  torch::nn::Conv2d lateral1{nullptr}, lateral2{nullptr}, lateral3{nullptr};
  torch::nn::ModuleList to_token;
  torch::Tensor position;
  torch::nn::ModuleList attention, feed_forward, linear;
  torch::nn::LayerNorm final_norm{nullptr};
  torch::nn::Linear head{nullptr};

  EncoderNetImpl(const EncoderArchConfig& c, uint64_t seed) : cfg(c), groups(token_groups(layer_count(c.resolution))) {
    const auto ch = c.feature_channels;
    auto conv = [](int64_t in, int64_t out, int64_t k, int64_t stride) {
      return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
    };
    stem = register_module(detail::registered_name("pyramid.stem"), conv(c.image_channels, ch, 3, 1));
    down1 = register_module(detail::registered_name("pyramid.down1"), conv(ch, ch, 3, 2));
    down2 = register_module(detail::registered_name("pyramid.down2"), conv(ch, ch, 3, 2));
    down3 = register_module(detail::registered_name("pyramid.down3"), conv(ch, ch, 3, 2));
    lateral1 = register_module(detail::registered_name("pyramid.lateral1"), conv(ch, ch, 1, 1));
    lateral2 = register_module(detail::registered_name("pyramid.lateral2"), conv(ch, ch, 1, 1));
    lateral3 = register_module(detail::registered_name("pyramid.lateral3"), conv(ch, ch, 1, 1));
    for (int64_t i = 0; i < groups.layers; ++i) to_token->push_back(torch::nn::Linear(ch * 4, c.token_dim));
    register_module(detail::registered_name("tokens"), to_token);
    position = register_parameter(detail::registered_name("tokens.position"), torch::zeros({groups.layers, c.token_dim}));

    switch (c.kind) {
      case SubEncoderKind::transformer:
      case SubEncoderKind::attention:
        for (int64_t i = 0; i < c.depth; ++i) {
          attention->push_back(Attention(c.token_dim, c.heads, c.head_dim));
          if (c.kind == SubEncoderKind::transformer) feed_forward->push_back(FeedForward(c.token_dim, c.mlp_dim));
        }
        break;
      case SubEncoderKind::linear_1:
      case SubEncoderKind::linear_8: {
        const int64_t count = c.kind == SubEncoderKind::linear_1 ? 1 : 8;
        for (int64_t i = 0; i < count; ++i) linear->push_back(torch::nn::Linear(c.token_dim, c.token_dim));
        break;
      }
    }
    register_module(detail::registered_name("sub.attention"), attention);
    register_module(detail::registered_name("sub.feed_forward"), feed_forward);
    register_module(detail::registered_name("sub.linear"), linear);
    final_norm = register_module(detail::registered_name("sub.norm"), torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.token_dim})));
    head = register_module(detail::registered_name("head"), torch::nn::Linear(c.token_dim, c.latent_dim));
    initialize(seed);
  }

  void initialize(uint64_t seed) {
    torch::NoGradGuard guard;
    auto gen = at::detail::createCPUGenerator(seed);
    for (auto& item : named_parameters()) {
      auto& p = item.value();
      const auto name = detail::public_name(item.key());
      if (name.find("norm") != std::string::npos) {
        p.fill_(name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0 ? 1.0 : 0.0);
      } else if (p.dim() >= 2 && name != "tokens.position") {
        const double fan_in = static_cast<double>(p[0].numel());
        p.copy_(at::randn(p.sizes(), gen) * std::sqrt(1.0 / fan_in));
      } else if (name == "tokens.position") {
        p.copy_(at::randn(p.sizes(), gen) * 0.02);
      } else {
        p.zero_();
      }
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto act = [](const torch::Tensor& t) { return torch::leaky_relu(t, 0.2); };
    auto up = [](const torch::Tensor& t, const torch::Tensor& like) {
      return nnf::interpolate(t, nnf::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                     .mode(torch::kNearest));
    };
    auto h = act(stem(x));
    auto c1 = act(down1(h));
    auto c2 = act(down2(c1));
    auto c3 = act(down3(c2));
    auto p3 = lateral3(c3);
    auto p2 = lateral2(c2) + up(p3, c2);
    auto p1 = lateral1(c1) + up(p2, c1);

    auto pool = [](const torch::Tensor& t) { return torch::adaptive_avg_pool2d(t, {2, 2}).flatten(1); };
    const auto coarse = pool(p3), middle = pool(p2), fine = pool(p1);
    std::vector<torch::Tensor> tokens;
    tokens.reserve(groups.layers);
    for (int64_t i = 0; i < groups.layers; ++i) {
      const auto& src = i < groups.coarse_end ? coarse : (i < groups.middle_end ? middle : fine);
      tokens.push_back(to_token[i]->as<torch::nn::Linear>()->forward(src));
    }
    auto t = torch::stack(tokens, 1) + position.unsqueeze(0);

    if (!attention->is_empty()) {
      for (size_t i = 0; i < attention->size(); ++i) {
        t = t + attention[i]->as<Attention>()->forward(t);
        if (!feed_forward->is_empty()) t = t + feed_forward[i]->as<FeedForward>()->forward(t);
      }
      t = final_norm(t);
    } else {
      for (size_t i = 0; i < linear->size(); ++i) t = torch::leaky_relu(linear[i]->as<torch::nn::Linear>()->forward(t), 0.2);
    }
    return head(t);
  }
};

}  // namespace detail

Encoder::Encoder(const EncoderArchConfig& config, uint64_t seed)
    : config_(config), layers_(layer_count(config.resolution)), net_(std::make_shared<detail::EncoderNetImpl>(config, seed)) {}

Encoder::Encoder(const Encoder& other)
    : config_(other.config_), layers_(other.layers_), net_(std::make_shared<detail::EncoderNetImpl>(other.config_, 0)) {
  net_->to(other.net_->position.scalar_type());
  load_named_tensors(other.named_tensors());
}

Encoder& Encoder::operator=(const Encoder& other) {
  if (this != &other) *this = Encoder(other);
  return *this;
}

Encoder::~Encoder() = default;

ExtendedLatent Encoder::encode(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != config_.image_channels || images.size(2) != config_.resolution ||
      images.size(3) != config_.resolution) {
    throw InvalidArgument("encoder expects [B, " + std::to_string(config_.image_channels) + ", " +
                          std::to_string(config_.resolution) + ", " + std::to_string(config_.resolution) + "] images");
  }
  return ExtendedLatent(net_->forward(images.to(net_->position.scalar_type())));
}

std::vector<torch::Tensor> Encoder::parameters() const { return net_->parameters(); }

NamedTensors Encoder::named_tensors() const {
  NamedTensors out;
  for (const auto& item : net_->named_parameters()) out.emplace(detail::public_name(item.key()), item.value().detach().clone());
  return out;
}

void Encoder::load_named_tensors(const NamedTensors& tensors) {
  torch::NoGradGuard guard;
  auto params = net_->named_parameters();
  if (params.size() != tensors.size()) throw InvalidArgument("encoder import tensor count mismatch");
  for (auto& item : params) {
    auto it = tensors.find(detail::public_name(item.key()));
    if (it == tensors.end() || it->second.sizes() != item.value().sizes()) {
      throw InvalidArgument("encoder import: missing or mis-shaped '" + detail::public_name(item.key()) + "'");
    }
    item.value().copy_(it->second);
  }
}

void Encoder::to(torch::Dtype dtype) { net_->to(dtype); }

Checkpoint encoder_checkpoint(const Encoder& encoder) {
  Checkpoint ckpt;
  ckpt.kind = "encoder";
  ckpt.metadata = {{"config", to_json(encoder.config())},
                   {"resolution", encoder.config().resolution},
                   {"n", encoder.layers()}};
  ckpt.tensors = encoder.named_tensors();
  return ckpt;
}

Encoder encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "encoder") throw InvalidData("checkpoint kind is '" + ckpt.kind + "', expected 'encoder'");
  Encoder e(encoder_arch_from_json(ckpt.metadata.at("config")), 0);
  e.load_named_tensors(ckpt.tensors);
  return e;
}

void save_encoder(const std::filesystem::path& path, const Encoder& encoder) {
  write_checkpoint(path, encoder_checkpoint(encoder));
}

Encoder load_encoder(const std::filesystem::path& path) { return encoder_from_checkpoint(read_checkpoint(path)); }

}  // namespace ctlgan
