#include <doctest.h>

#include "ctlgan/encoder.hpp"
#include "ctlgan/errors.hpp"
#include "support.hpp"

#include <cmath>

using namespace ctlgan;
using ctlgan::testing::bitwise_equal;

namespace {

EncoderArchConfig tiny_arch(SubEncoderKind kind = SubEncoderKind::transformer) {
  EncoderArchConfig a;
  a.resolution = 16;
  a.latent_dim = 8;
  a.feature_channels = 4;
  a.kind = kind;
  a.token_dim = 16;
  a.depth = 1;
  a.heads = 2;
  a.head_dim = 8;
  a.mlp_dim = 32;
  return a;
}

GeneratorConfig tiny_decoder() {
  GeneratorConfig c;
  c.resolution = 16;
  c.latent_dim = 8;
  c.channels = 4;
  c.mapping_layers = 2;
  return c;
}

ReconstructionCriteria criteria() {
  return {make_toy_backbone(3), std::make_shared<ToyIdentityEmbedder>(3), std::nullopt};
}

torch::Tensor images(int64_t n, int64_t res, uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::detail::createCPUGenerator(seed);
  return (at::rand({n, 3, res, res}, gen) * 1.6 - 0.8).to(dtype);
}

double smooth_l1_scalar(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }

// A fixed linear decoder from a [B, n, d] code to 16x16 images, used as a hand-built one-layer decoder.
struct LinearDecoder {
  torch::Tensor a;
  explicit LinearDecoder(int64_t inputs) {
    auto gen = at::detail::createCPUGenerator(77);
    a = at::randn({inputs, 3 * 16 * 16}, gen).to(torch::kFloat64) / std::sqrt(double(inputs));
  }
  torch::Tensor operator()(const torch::Tensor& code) const {
    return torch::tanh(code.flatten(1).matmul(a)).view({code.size(0), 3, 16, 16});
  }
};

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("encode returns one row per generator layer") {
    EncoderArchConfig full;
    full.resolution = 32;
    full.feature_channels = 8;
    full.depth = 1;
    Encoder e(full, 1);
    auto z = e.encode(images(2, 32, 1));
    CHECK(z.rows().sizes() == torch::IntArrayRef({2, layer_count(32), 512}));
  }

  TEST_CASE("encode is deterministic for every sub-encoder kind") {
    for (auto kind : {SubEncoderKind::transformer, SubEncoderKind::linear_1, SubEncoderKind::linear_8,
                      SubEncoderKind::attention}) {
      Encoder e(tiny_arch(kind), 2);
      auto x = images(3, 16, 2);
      auto a = e.encode(x);
      auto b = e.encode(x);
      CHECK(a.rows().sizes() == torch::IntArrayRef({3, 6, 8}));
      CHECK(bitwise_equal(a.rows(), b.rows()));
      CHECK(parse_sub_encoder_kind(to_string(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_sub_encoder_kind("mlp"), InvalidArgument);
  }

  TEST_CASE("encode rejects a resolution mismatch") {
    Encoder e(tiny_arch(), 3);
    CHECK_THROWS_AS(e.encode(images(1, 32, 1)), InvalidArgument);
    CHECK_THROWS_AS(e.encode(torch::zeros({1, 1, 16, 16})), InvalidArgument);
  }

  TEST_CASE("token groups follow coarse, middle and fine slots") {
    auto g = token_groups(14);
    CHECK(g.coarse_end == 3);
    CHECK(g.middle_end == 7);
    CHECK(g.layers == 14);
    for (int64_t n : {4, 6, 8, 10, 18}) {
      auto t = token_groups(n);
      CHECK(t.coarse_end >= 1);
      CHECK(t.middle_end > t.coarse_end);
      CHECK(t.layers > t.middle_end);
    }
  }

  TEST_CASE("encoder copies are independent") {
    Encoder e(tiny_arch(), 4);
    Encoder copy = e;
    auto x = images(1, 16, 3);
    CHECK(bitwise_equal(copy.encode(x).rows(), e.encode(x).rows()));
    {
      torch::NoGradGuard no_grad;
      for (auto& p : copy.parameters()) p.add_(0.1);
    }
    CHECK_FALSE(torch::equal(copy.encode(x).rows(), e.encode(x).rows()));
  }

  TEST_CASE("smooth l1 hand values") {
    auto zero = torch::zeros({1}, torch::kFloat64);
    CHECK(smooth_l1(zero, zero).item<double>() == 0.0);
    CHECK(smooth_l1(torch::full({1}, 1.0, torch::kFloat64), zero).item<double>() == 0.5);
    CHECK(smooth_l1(torch::full({1}, 2.0, torch::kFloat64), zero).item<double>() == 1.5);
    CHECK(smooth_l1(torch::full({1}, -2.0, torch::kFloat64), zero).item<double>() == 1.5);
    CHECK_THROWS_AS(smooth_l1(torch::zeros({2}), torch::zeros({3})), InvalidArgument);
  }

  TEST_CASE("smooth l1 is continuous and once differentiable at the knee") {
    const double eps = 1e-9;
    for (double sign : {1.0, -1.0}) {
      const double knee = sign;
      auto below = smooth_l1(torch::full({1}, knee - sign * eps, torch::kFloat64), torch::zeros({1}, torch::kFloat64));
      auto above = smooth_l1(torch::full({1}, knee + sign * eps, torch::kFloat64), torch::zeros({1}, torch::kFloat64));
      CHECK(std::abs(below.item<double>() - 0.5) < 1e-8);
      CHECK(std::abs(above.item<double>() - 0.5) < 1e-8);
      // Quadratic piece slope d, linear piece slope sign(d); both equal sign at |d| = 1.
      const double quad_slope = knee;
      const double lin_slope = sign;
      CHECK(std::abs(quad_slope - lin_slope) < 1e-9);
      auto x = torch::full({1}, knee - sign * 1e-12, torch::kFloat64).set_requires_grad(true);
      auto g_in = torch::autograd::grad({smooth_l1(x, torch::zeros({1}, torch::kFloat64))}, {x})[0];
      auto y = torch::full({1}, knee + sign * 1e-12, torch::kFloat64).set_requires_grad(true);
      auto g_out = torch::autograd::grad({smooth_l1(y, torch::zeros({1}, torch::kFloat64))}, {y})[0];
      CHECK(std::abs(g_in.item<double>() - g_out.item<double>()) < 1e-9);
    }
  }

  TEST_CASE("smooth l1 matches the elementwise definition") {
    auto gen = at::detail::createCPUGenerator(4);
    auto a = at::randn({5, 3}, gen).to(torch::kFloat64) * 2;
    auto b = at::randn({5, 3}, gen).to(torch::kFloat64) * 2;
    double expected = 0.0;
    for (int64_t i = 0; i < 5; ++i) {
      for (int64_t j = 0; j < 3; ++j) expected += smooth_l1_scalar(a[i][j].item<double>() - b[i][j].item<double>());
    }
    CHECK(smooth_l1(a, b).item<double>() == doctest::Approx(expected / 15.0).epsilon(1e-14));
  }

  TEST_CASE("path-1 loss") {
    auto crit = criteria();
    EncoderConfig cfg;
    CHECK(cfg.lambda_l2 == 1.0);
    CHECK(cfg.lambda_lpips == 0.8);
    CHECK(cfg.lambda_reg == 0.0);
    CHECK(cfg.lambda_iden == 0.1);
    auto x = images(2, 16, 5, torch::kFloat64);
    auto z = torch::randn({2, 6, 8}, torch::kFloat64);
    CHECK(path1_loss(x, x, z, cfg, crit).item<double>() == doctest::Approx(0.0).epsilon(1e-12));

    auto y = images(2, 16, 6, torch::kFloat64);
    auto terms = path1_terms(x, y, z, cfg, crit);
    const double expected = 1.0 * terms.l2.item<double>() + 0.8 * terms.lpips.item<double>() +
                            0.1 * terms.iden.item<double>();
    CHECK(terms.total.item<double>() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(terms.l2.item<double>() == doctest::Approx((x - y).pow(2).mean().item<double>()));

    auto doubled = cfg;
    doubled.lambda_iden *= 2;
    const double base_iden = path1_loss(x, y, z, cfg, crit).item<double>() -
                             path1_loss(x, y, z, [&] { auto c = cfg; c.lambda_iden = 0; return c; }(), crit).item<double>();
    const double double_iden = path1_loss(x, y, z, doubled, crit).item<double>() -
                               path1_loss(x, y, z, [&] { auto c = cfg; c.lambda_iden = 0; return c; }(), crit).item<double>();
    CHECK(double_iden == doctest::Approx(2.0 * base_iden).epsilon(1e-10));

    auto reg = cfg;
    reg.lambda_reg = 0.5;
    CHECK(path1_loss(x, x, z, reg, crit).item<double>() ==
          doctest::Approx(0.5 * z.pow(2).mean().item<double>()).epsilon(1e-12));
    CHECK_THROWS_AS(path1_loss(x, images(1, 16, 6, torch::kFloat64), z, cfg, crit), InvalidArgument);
    auto nan_x = x.clone();
    nan_x[0][0][0][0] = NAN;
    CHECK_THROWS_AS(path1_loss(nan_x, y, z, cfg, crit), NumericFailure);
  }

  TEST_CASE("path-2 loss with an exact encoder is zero") {
    auto crit = criteria();
    EncoderConfig cfg;
    CHECK(cfg.lambda_z_predict == 0.1);
    CHECK(cfg.lambda_path1 == 1.0);
    LinearDecoder decode(8);
    auto z_o = extend_repeat(sample_z(2, 1, 8).to(torch::kFloat64), 1).rows();
    auto x_syn = decode(z_o);
    CHECK(path2_loss(z_o, z_o, x_syn, decode(z_o), cfg, crit).item<double>() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(path2_loss(z_o, z_o.slice(2, 0, 4), x_syn, x_syn, cfg, crit), InvalidArgument);
  }

  TEST_CASE("path-2 loss on a one-layer decoder matches a two-term oracle") {
    auto crit = criteria();
    EncoderConfig cfg;
    cfg.lambda_path1 = 0.7;
    LinearDecoder decode(8);
    auto z_o = extend_repeat(sample_z(2, 2, 8).to(torch::kFloat64), 1).rows();
    auto z_e = z_o + 0.8 * torch::randn_like(z_o);
    auto x_syn = decode(z_o);
    auto x_rec = decode(z_e);

    double mse = 0.0;
    auto diff = (x_syn - x_rec).flatten();
    for (int64_t i = 0; i < diff.numel(); ++i) mse += std::pow(diff[i].item<double>(), 2);
    mse /= double(diff.numel());
    const double lp = lpips(x_syn, x_rec, *crit.backbone, PerceptualWeights::unit(5)).mean().item<double>();
    const double id = identity_distance(x_syn, x_rec, *crit.embedder).mean().item<double>();
    double sl1 = 0.0;
    auto dz = (z_o - z_e).flatten();
    for (int64_t i = 0; i < dz.numel(); ++i) sl1 += smooth_l1_scalar(dz[i].item<double>());
    sl1 /= double(dz.numel());
    const double expected = 0.7 * (1.0 * mse + 0.8 * lp + 0.1 * id) + 0.1 * sl1;
    CHECK(path2_loss(z_o, z_e, x_syn, x_rec, cfg, crit).item<double>() == doctest::Approx(expected).epsilon(1e-10));
  }

  TEST_CASE("path-2 loss gradient with respect to the encoded code") {
    auto crit = criteria();
    EncoderConfig cfg;
    LinearDecoder decode(8);
    auto z_o = extend_repeat(sample_z(1, 3, 8).to(torch::kFloat64), 1).rows();
    auto z_e = z_o + 0.5 * torch::randn_like(z_o);
    auto x_syn = decode(z_o);
    auto check = ctlgan::testing::gradient_check(
        [&](const torch::Tensor& ze) { return path2_loss(z_o, ze, x_syn, decode(ze), cfg, crit); }, z_e);
    CHECK(check.max_rel_error < 1e-3);
  }

  TEST_CASE("training keeps the decoder frozen and alternates paths") {
    Generator decoder(tiny_decoder(), 1);
    decoder.set_requires_grad(false);
    const auto before = tensor_checksum(decoder.parameters());
    EncoderConfig cfg;
    cfg.stage1_iterations = 2;
    cfg.dual_path_iterations = 4;
    cfg.batch = 2;
    cfg.learning_rate = 1e-3;
    std::vector<EncoderLogRecord> log;
    EncoderHooks hooks;
    hooks.on_step = [&](const EncoderLogRecord& r) { log.push_back(r); };
    auto enc = train_encoder(images(4, 16, 7), decoder, cfg, tiny_arch(), criteria(), hooks);
    CHECK(tensor_checksum(decoder.parameters()) == before);
    REQUIRE(log.size() == 6);
    const char* expected[] = {"path1", "path1", "path1", "path2", "path1", "path2"};
    for (size_t i = 0; i < log.size(); ++i) {
      CHECK(log[i].path == expected[i]);
      CHECK(log[i].step == static_cast<int64_t>(i));
      CHECK(std::isfinite(log[i].total));
      auto j = to_json(log[i]);
      CHECK(j.contains("z_predict"));
    }
    CHECK(log[3].z_predict > 0.0);
  }

  TEST_CASE("zero-iteration training returns the initialization") {
    Generator decoder(tiny_decoder(), 2);
    EncoderConfig cfg;
    cfg.stage1_iterations = 0;
    cfg.dual_path_iterations = 0;
    cfg.seed = 5;
    auto enc = train_encoder(images(2, 16, 8), decoder, cfg, tiny_arch(), criteria());
    Encoder init(tiny_arch(), 5);
    CHECK(tensor_checksum(enc.parameters()) == tensor_checksum(init.parameters()));
  }

  TEST_CASE("training preconditions") {
    Generator decoder(tiny_decoder(), 3);
    EncoderConfig cfg;
    cfg.stage1_iterations = 1;
    cfg.dual_path_iterations = 0;
    CHECK_THROWS_AS(train_encoder(torch::zeros({0, 3, 16, 16}), decoder, cfg, tiny_arch(), criteria()),
                    InvalidArgument);
    auto arch = tiny_arch();
    arch.latent_dim = 6;
    CHECK_THROWS_AS(train_encoder(images(2, 16, 1), decoder, cfg, arch, criteria()), InvalidArgument);
    auto bad = cfg;
    bad.learning_rate = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  }

  TEST_CASE("encoder config json round trip") {
    EncoderConfig c;
    c.lambda_reg = 0.25;
    c.dual_path = false;
    c.seed = 9;
    CHECK(encoder_config_from_json(to_json(c)) == c);
    auto a = tiny_arch(SubEncoderKind::linear_8);
    CHECK(encoder_arch_from_json(to_json(a)) == a);
    EncoderConfig defaults;
    CHECK(defaults.learning_rate == 1e-4);
  }

  TEST_CASE("default sub-encoder shape") {
    EncoderArchConfig a;
    CHECK(a.kind == SubEncoderKind::transformer);
    CHECK(a.depth == 6);
    CHECK(a.heads == 14);
    CHECK(a.head_dim == 64);
    CHECK(a.mlp_dim == 1024);
    CHECK(a.token_dim == 512);
  }
}
