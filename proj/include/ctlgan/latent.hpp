#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace ctlgan {

inline constexpr int64_t kDefaultLatentDim = 512;

/// Number of style inputs of a style-based generator at `resolution` pixels per side:
/// two per resolution level from 4x4 upwards. Throws InvalidArgument unless the
/// resolution is a power of two >= 8.
int64_t layer_count(int64_t resolution);

/// A batch of Z+ codes stored as a [batch, n, dim] tensor. Row l of a code feeds
/// generator layer l.
class ExtendedLatent {
 public:
  ExtendedLatent() = default;
  explicit ExtendedLatent(torch::Tensor rows);

  const torch::Tensor& rows() const { return rows_; }
  int64_t batch() const { return rows_.size(0); }
  int64_t layers() const { return rows_.size(1); }
  int64_t dim() const { return rows_.size(2); }

  /// Code `index` of the batch as a single-code ExtendedLatent.
  ExtendedLatent at(int64_t index) const;

  /// True when every code in the batch has identical rows.
  bool is_repeat_extended(double tol = 0.0) const;

 private:
  torch::Tensor rows_;
};

/// Seeded standard-normal sampler. One instance per pipeline stage; not shared between threads.
class LatentSampler {
 public:
  explicit LatentSampler(uint64_t seed, int64_t dim = kDefaultLatentDim);

  /// `count` codes as a [count, dim] tensor.
  torch::Tensor sample(int64_t count);
  /// Standard-normal tensor of arbitrary shape drawn from the same stream.
  torch::Tensor normal(at::IntArrayRef shape);

  int64_t dim() const { return dim_; }
  torch::Generator& generator() { return gen_; }

 private:
  int64_t dim_;
  torch::Generator gen_;
};

/// `count` independent N(0, I) codes as a [count, dim] tensor; bitwise reproducible per seed.
torch::Tensor sample_z(int64_t count, uint64_t seed, int64_t dim = kDefaultLatentDim);

/// Repeats each code n times. Accepts [dim] or [batch, dim].
ExtendedLatent extend_repeat(const torch::Tensor& z, int64_t n);

/// Stacks one code per generator layer into a single Z+ code. `expected_layers`
/// (when positive) must equal codes.size().
ExtendedLatent stack_zplus(const std::vector<torch::Tensor>& codes, int64_t expected_layers = -1);

}  // namespace ctlgan
