#include <doctest.h>

#include "ctlgan/checkpoint.hpp"
#include "ctlgan/encoder.hpp"
#include "ctlgan/errors.hpp"
#include "support.hpp"

#include <fstream>

using namespace ctlgan;
using ctlgan::testing::bitwise_equal;

TEST_SUITE("checkpoint") {
  TEST_CASE("generic container round trip") {
    auto dir = ctlgan::testing::scratch_dir("ckpt_generic");
    Checkpoint c;
    c.kind = "custom";
    c.metadata = {{"answer", 42}, {"name", "x"}};
    c.tensors["a"] = torch::randn({2, 3});
    c.tensors["b.c"] = torch::randn({4}, torch::kFloat64);
    c.tensors["idx"] = torch::arange(5, torch::kLong);
    write_checkpoint(dir / "c.ckpt", c);
    auto back = read_checkpoint(dir / "c.ckpt");
    CHECK(back.kind == "custom");
    CHECK(back.metadata["answer"] == 42);
    REQUIRE(back.tensors.size() == 3);
    for (const auto& [name, t] : c.tensors) CHECK(bitwise_equal(back.tensors.at(name), t));
  }

  TEST_CASE("generator round trip preserves synthesis bitwise") {
    auto dir = ctlgan::testing::scratch_dir("ckpt_generator");
    GeneratorConfig cfg;
    cfg.resolution = 16;
    cfg.latent_dim = 8;
    cfg.channels = 4;
    cfg.mapping_layers = 3;
    cfg.image_channels = 1;
    Generator g(cfg, 5);
    save_generator(dir / "g.ckpt", g);
    auto back = load_generator(dir / "g.ckpt");
    CHECK(back.config() == cfg);
    CHECK(tensor_checksum(back.parameters()) == tensor_checksum(g.parameters()));
    auto zp = extend_repeat(sample_z(2, 1, 8), back.layers());
    CHECK(bitwise_equal(back.synthesize(zp).images, g.synthesize(zp).images));
    CHECK(generator_config_from_json(to_json(cfg)) == cfg);
  }

  TEST_CASE("encoder round trip") {
    auto dir = ctlgan::testing::scratch_dir("ckpt_encoder");
    EncoderArchConfig a;
    a.resolution = 16;
    a.latent_dim = 8;
    a.feature_channels = 4;
    a.token_dim = 16;
    a.depth = 1;
    a.heads = 2;
    a.head_dim = 8;
    a.mlp_dim = 16;
    Encoder e(a, 3);
    save_encoder(dir / "e.ckpt", e);
    auto back = load_encoder(dir / "e.ckpt");
    CHECK(back.config() == a);
    auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
    CHECK(bitwise_equal(back.encode(x).rows(), e.encode(x).rows()));
    CHECK_THROWS_AS(load_generator(dir / "e.ckpt"), InvalidData);
  }

  TEST_CASE("malformed files are rejected") {
    auto dir = ctlgan::testing::scratch_dir("ckpt_bad");
    {
      std::ofstream os(dir / "junk.ckpt", std::ios::binary);
      os << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(read_checkpoint(dir / "junk.ckpt"), InvalidData);
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), ConfigError);

    Checkpoint c;
    c.kind = "custom";
    c.tensors["a"] = torch::randn({64});
    write_checkpoint(dir / "full.ckpt", c);
    const auto size = std::filesystem::file_size(dir / "full.ckpt");
    std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt");
    std::filesystem::resize_file(dir / "cut.ckpt", size - 16);
    CHECK_THROWS_AS(read_checkpoint(dir / "cut.ckpt"), InvalidData);
  }

  TEST_CASE("checksum tracks every byte") {
    auto a = torch::zeros({4});
    auto b = torch::zeros({4});
    CHECK(tensor_checksum({a}) == tensor_checksum({b}));
    b[2] = 1e-30;
    CHECK(tensor_checksum({a}) != tensor_checksum({b}));
    CHECK(all_finite({a, b}));
    b[0] = INFINITY;
    CHECK_FALSE(all_finite({a, b}));
  }
}
