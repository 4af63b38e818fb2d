#include <doctest.h>

#include "ctlgan/errors.hpp"
#include "ctlgan/toy_domains.hpp"
#include "support.hpp"

using namespace ctlgan;

TEST_SUITE("toy") {
  TEST_CASE("toy renders are bounded and deterministic") {
    auto a = toy_dataset(ToyDomain::A, 4, 1, 32);
    CHECK(a.sizes() == torch::IntArrayRef({4, 3, 32, 32}));
    CHECK(a.abs().max().item<double>() <= 1.0);
    CHECK(torch::equal(a, toy_dataset(ToyDomain::A, 4, 1, 32)));
    CHECK(toy_dataset(ToyDomain::B, 2, 1, 16, 32, 1).sizes() == torch::IntArrayRef({2, 1, 16, 16}));
    CHECK_THROWS_AS(render_toy(torch::zeros({2, 4}), ToyDomain::A, 32), InvalidArgument);
  }

  TEST_CASE("both domains share content but differ in style") {
    auto z = sample_z(6, 2, 32);
    auto a = render_toy(z, ToyDomain::A, 32);
    auto b = render_toy(z, ToyDomain::B, 32);
    CHECK_FALSE(torch::equal(a, b));
    // Same latent -> same disc placement: the brightest-difference pixels agree more within a pair than across.
    const double paired = (a - b).abs().mean().item<double>();
    const double crossed = (a - b.roll(1, 0)).abs().mean().item<double>();
    CHECK(paired < crossed);
  }

  TEST_CASE("short pretraining lowers the pixel loss") {
    auto gcfg = toy_generator_config(16);
    PretrainConfig p;
    p.steps = 30;
    p.batch = 4;
    std::vector<double> losses;
    auto g = pretrain_toy_generator(gcfg, p, [&](int64_t, double l) { losses.push_back(l); });
    REQUIRE(losses.size() == 30);
    CHECK(losses.back() < losses.front());
    for (const auto& t : g.parameters()) CHECK_FALSE(t.requires_grad());
    CHECK(pretrain_config_from_json(to_json(p)) == p);
  }
}
