#include <doctest.h>

#include "ctlgan/errors.hpp"
#include "ctlgan/latent.hpp"
#include "support.hpp"

using namespace ctlgan;
using ctlgan::testing::bitwise_equal;

TEST_SUITE("latent") {
  TEST_CASE("sample_z is bitwise reproducible per seed") {
    auto a = sample_z(4, 7);
    auto b = sample_z(4, 7);
    CHECK(bitwise_equal(a, b));
    CHECK_FALSE(torch::equal(a, sample_z(4, 8)));
  }

  TEST_CASE("sample_z shape") {
    auto z = sample_z(1, 0);
    CHECK(z.sizes() == torch::IntArrayRef({1, 512}));
    CHECK(sample_z(3, 0, 16).sizes() == torch::IntArrayRef({3, 16}));
  }

  TEST_CASE("sample_z moments over 10^4 codes") {
    auto z = sample_z(10000, 1).to(torch::kFloat64);
    auto mean = z.mean(0);
    auto var = z.var(0);
    CHECK(mean.abs().max().item<double>() <= 0.05);
    CHECK(var.min().item<double>() >= 0.9);
    CHECK(var.max().item<double>() <= 1.1);
  }

  TEST_CASE("sample_z rejects a nonpositive count") {
    CHECK_THROWS_AS(sample_z(0, 0), InvalidArgument);
  }

  TEST_CASE("extend_repeat of zeros") {
    auto zp = extend_repeat(torch::zeros({512}), 14);
    CHECK(zp.rows().sizes() == torch::IntArrayRef({1, 14, 512}));
    CHECK(zp.rows().abs().max().item<double>() == 0.0);
  }

  TEST_CASE("extend_repeat copies the code into every row") {
    auto z = sample_z(2, 3, 8);
    auto zp = extend_repeat(z, 3);
    for (int64_t r = 0; r < 3; ++r) CHECK(bitwise_equal(zp.rows().select(1, r), z));
    CHECK(zp.is_repeat_extended());
    auto single = extend_repeat(z[0], 1);
    CHECK(bitwise_equal(single.rows()[0][0], z[0]));
  }

  TEST_CASE("extend_repeat rows have zero variance across rows") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      auto zp = extend_repeat(sample_z(3, seed, 32), 6);
      CHECK(zp.rows().var(1, /*unbiased=*/false).abs().max().item<double>() == 0.0);
    }
  }

  TEST_CASE("stack_zplus") {
    auto z = sample_z(2, 5, 8);
    auto same = stack_zplus({z[0], z[0]});
    CHECK(bitwise_equal(same.rows(), extend_repeat(z[0], 2).rows()));
    auto two = stack_zplus({z[0], z[1]});
    CHECK(bitwise_equal(two.rows()[0][0], z[0]));
    CHECK(bitwise_equal(two.rows()[0][1], z[1]));
    CHECK_FALSE(two.is_repeat_extended());
    CHECK_THROWS_AS(stack_zplus({}), InvalidArgument);
    CHECK_THROWS_AS(stack_zplus({z[0], torch::zeros({4})}), InvalidArgument);
    CHECK_THROWS_AS(stack_zplus({z[0], z[1]}, 3), InvalidArgument);
  }

  TEST_CASE("layer_count anchor points") {
    CHECK(layer_count(1024) == 18);
    CHECK(layer_count(256) == 14);
    CHECK(layer_count(64) == 10);
    CHECK(layer_count(32) == 8);
  }

  TEST_CASE("layer_count is strictly increasing and rejects bad resolutions") {
    int64_t prev = 0;
    for (int64_t r = 8; r <= 4096; r *= 2) {
      CHECK(layer_count(r) > prev);
      prev = layer_count(r);
    }
    CHECK_THROWS_AS(layer_count(100), InvalidArgument);
    CHECK_THROWS_AS(layer_count(0), InvalidArgument);
    CHECK_THROWS_AS(layer_count(4), InvalidArgument);
  }

  TEST_CASE("ExtendedLatent::at selects one code") {
    auto zp = extend_repeat(sample_z(3, 2, 4), 2);
    CHECK(bitwise_equal(zp.at(1).rows()[0], zp.rows()[1]));
    CHECK(zp.at(1).batch() == 1);
  }
}
