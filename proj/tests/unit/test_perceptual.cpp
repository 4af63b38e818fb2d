#include <doctest.h>

#include "ctlgan/errors.hpp"
#include "ctlgan/perceptual.hpp"
#include "support.hpp"

#include <cmath>

using namespace ctlgan;

namespace {

std::shared_ptr<ConvStackBackbone> two_tap_backbone() {
  return std::make_shared<ConvStackBackbone>(
      3, std::vector<ConvStage>{{{3}, 1, false}, {{4}, 2, false}}, Activation::leaky_relu, 21);
}

torch::Tensor random_images(int64_t n, int64_t side, uint64_t seed, torch::Dtype dtype = torch::kFloat64) {
  auto gen = at::detail::createCPUGenerator(seed);
  return (at::rand({n, 3, side, side}, gen) * 2 - 1).to(dtype);
}

// Loops over taps, pixels and channels with scalar arithmetic.
double lpips_oracle(const std::vector<torch::Tensor>& fx, const std::vector<torch::Tensor>& fy,
                    const std::vector<double>& w, int64_t sample) {
  double total = 0.0;
  for (size_t k = 0; k < fx.size(); ++k) {
    auto a = fx[k][sample].to(torch::kFloat64);
    auto b = fy[k][sample].to(torch::kFloat64);
    const int64_t c = a.size(0), h = a.size(1), wd = a.size(2);
    double tap = 0.0;
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < wd; ++j) {
        double na = 0.0, nb = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          na += std::pow(a[ch][i][j].item<double>(), 2);
          nb += std::pow(b[ch][i][j].item<double>(), 2);
        }
        na = std::sqrt(na) + 1e-10;
        nb = std::sqrt(nb) + 1e-10;
        double sq = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          sq += std::pow(a[ch][i][j].item<double>() / na - b[ch][i][j].item<double>() / nb, 2);
        }
        tap += sq;
      }
    }
    total += w[k] * tap / double(h * wd);
  }
  return total;
}

class FixedEmbedder final : public IdentityEmbedder {
 public:
  explicit FixedEmbedder(torch::Tensor per_sample) : e_(std::move(per_sample)) {}
  torch::Tensor embed(const torch::Tensor& images) const override {
    // Images are only used to choose the row: the first pixel holds the row index.
    auto idx = images.select(1, 0).select(1, 0).select(1, 0).to(torch::kLong);
    return e_.index_select(0, idx).to(images.scalar_type());
  }

 private:
  torch::Tensor e_;
};

}  // namespace

TEST_SUITE("perceptual") {
  TEST_CASE("toy backbone has five taps with decreasing resolution") {
    auto bb = make_toy_backbone(3);
    CHECK(bb->tap_count() == 5);
    auto taps = bb->features(random_images(2, 32, 1, torch::kFloat32));
    REQUIRE(taps.size() == 5);
    for (size_t k = 1; k < taps.size(); ++k) CHECK(taps[k].size(2) <= taps[k - 1].size(2));
    auto again = bb->features(random_images(2, 32, 1, torch::kFloat32));
    for (size_t k = 0; k < taps.size(); ++k) CHECK(torch::equal(taps[k], again[k]));
  }

  TEST_CASE("lpips of identical inputs is zero and lpips is symmetric") {
    auto bb = make_toy_backbone(3);
    auto w = PerceptualWeights::unit(5);
    auto x = random_images(4, 16, 2);
    auto y = random_images(4, 16, 3);
    CHECK(lpips(x, x, *bb, w).abs().max().item<double>() == 0.0);
    CHECK(ctlgan::testing::max_abs_diff(lpips(x, y, *bb, w), lpips(y, x, *bb, w)) < 1e-7);
    CHECK(lpips(x, y, *bb, w).min().item<double>() > 0.0);
  }

  TEST_CASE("two-tap backbone on 4x4 images matches the scalar oracle") {
    auto bb = two_tap_backbone();
    auto x = random_images(3, 4, 4);
    auto y = random_images(3, 4, 5);
    std::vector<double> w = {0.7, 1.3};
    auto got = lpips(x, y, *bb, PerceptualWeights(w));
    auto fx = bb->features(x);
    auto fy = bb->features(y);
    CHECK(fx[1].size(2) == 2);
    for (int64_t s = 0; s < 3; ++s) {
      CHECK(got[s].item<double>() == doctest::Approx(lpips_oracle(fx, fy, w, s)).epsilon(1e-12));
    }
  }

  TEST_CASE("pairwise_lpips matches per-pair lpips") {
    auto bb = make_toy_backbone(3);
    auto w = PerceptualWeights::unit(5);
    auto a = random_images(3, 16, 6);
    auto b = random_images(4, 16, 7);
    auto m = pairwise_lpips(bb->features(a), bb->features(b), w);
    REQUIRE(m.sizes() == torch::IntArrayRef({3, 4}));
    for (int64_t i = 0; i < 3; ++i) {
      for (int64_t j = 0; j < 4; ++j) {
        auto single = lpips(a.slice(0, i, i + 1), b.slice(0, j, j + 1), *bb, w);
        CHECK(m[i][j].item<double>() == doctest::Approx(single.item<double>()).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("modified lpips equals lpips with the fourth tap zeroed") {
    auto bb = make_toy_backbone(3);
    PerceptualWeights w({0.5, 1.0, 1.5, 2.0, 0.25});
    auto x = random_images(6, 16, 8);
    auto y = random_images(6, 16, 9);
    auto zeroed = PerceptualWeights({0.5, 1.0, 1.5, 0.0, 0.25});
    CHECK(ctlgan::testing::max_abs_diff(modified_lpips(x, y, *bb, w), lpips(x, y, *bb, zeroed)) < 1e-7);
    CHECK(ctlgan::testing::max_abs_diff(modified_lpips(x, y, *bb, zeroed), lpips(x, y, *bb, zeroed)) < 1e-7);
    CHECK(modified_lpips(x, x, *bb, w).abs().max().item<double>() == 0.0);
    CHECK(modified_weights(*bb, w)[3] == 0.0);
    CHECK(kOmittedTap == 4);
  }

  TEST_CASE("modified lpips needs five taps") {
    auto bb = two_tap_backbone();
    auto x = random_images(1, 4, 1);
    CHECK_THROWS_AS(modified_lpips(x, x, *bb, PerceptualWeights::unit(2)), InvalidArgument);
  }

  TEST_CASE("perceptual weights validation") {
    CHECK_THROWS_AS(PerceptualWeights(std::vector<double>{}), InvalidArgument);
    CHECK_THROWS_AS(PerceptualWeights({1.0, -0.1}), InvalidArgument);
    CHECK_THROWS_AS(PerceptualWeights({0.0, 0.0}), InvalidArgument);
    auto bb = make_toy_backbone(3);
    auto x = random_images(1, 16, 1);
    CHECK_THROWS_AS(lpips(x, x, *bb, PerceptualWeights::unit(4)), InvalidArgument);
    CHECK_THROWS_AS(lpips(x, random_images(2, 16, 1), *bb, PerceptualWeights::unit(5)), InvalidArgument);
  }

  TEST_CASE("lpips gradient matches central differences") {
    auto bb = make_toy_backbone(3);
    auto w = PerceptualWeights({1.0, 0.5, 2.0, 1.0, 0.7});
    auto y = random_images(1, 8, 10);
    auto x = random_images(1, 8, 11);
    auto check = ctlgan::testing::gradient_check(
        [&](const torch::Tensor& xi) { return lpips(xi, y, *bb, w).sum(); }, x);
    CHECK(check.checked > 10);
    CHECK(check.max_rel_error < 1e-3);
  }

  TEST_CASE("identity distance oracles") {
    ToyIdentityEmbedder toy(3);
    auto x = random_images(2, 16, 12);
    auto y = random_images(2, 16, 13);
    CHECK(identity_distance(x, x, toy).abs().max().item<double>() < 1e-12);

    auto ex = toy.embed(x);
    auto ey = toy.embed(y);
    for (int64_t i = 0; i < 2; ++i) {
      double dot = 0, nx = 0, ny = 0;
      for (int64_t k = 0; k < ex.size(1); ++k) {
        dot += ex[i][k].item<double>() * ey[i][k].item<double>();
        nx += std::pow(ex[i][k].item<double>(), 2);
        ny += std::pow(ey[i][k].item<double>(), 2);
      }
      const double expected = 1.0 - dot / std::sqrt(nx * ny);
      CHECK(identity_distance(x, y, toy)[i].item<double>() == doctest::Approx(expected).epsilon(1e-10));
    }

    FixedEmbedder fixed(torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kFloat64));
    auto a = torch::zeros({1, 3, 2, 2}, torch::kFloat64);
    auto b = torch::ones({1, 3, 2, 2}, torch::kFloat64);
    CHECK(identity_distance(a, b, fixed).item<double>() == doctest::Approx(1.0));
  }

  TEST_CASE("toy identity embedder rejects a zero embedding") {
    ToyIdentityEmbedder toy(3);
    CHECK_THROWS_AS(toy.embed(torch::zeros({1, 3, 16, 16})), NumericFailure);
  }

  TEST_CASE("latent regularizer is the mean square") {
    auto z = torch::tensor({1.0, -2.0, 3.0, 0.0}, torch::kFloat64).view({1, 2, 2});
    CHECK(latent_regularizer(z).item<double>() == doctest::Approx(14.0 / 4.0));
  }

  TEST_CASE("backbone checkpoint round trip") {
    auto bb = make_toy_backbone(3);
    auto copy = ConvStackBackbone::from_checkpoint(bb->to_checkpoint());
    auto x = random_images(2, 16, 14, torch::kFloat32);
    auto a = bb->features(x);
    auto b = copy->features(x);
    for (size_t k = 0; k < a.size(); ++k) CHECK(torch::equal(a[k], b[k]));
    auto bad = bb->to_checkpoint();
    bad.kind = "generator";
    CHECK_THROWS_AS(ConvStackBackbone::from_checkpoint(bad), InvalidData);
  }
}
