#include "ctlgan/latent.hpp"

#include "ctlgan/errors.hpp"

#include <bit>
#include <string>

namespace ctlgan {

int64_t layer_count(int64_t resolution) {
  if (resolution < 8 || !std::has_single_bit(static_cast<uint64_t>(resolution))) {
    throw InvalidArgument("resolution must be a power of two >= 8, got " + std::to_string(resolution));
  }
  const int64_t log2 = std::bit_width(static_cast<uint64_t>(resolution)) - 1;
  return 2 * (log2 - 1);
}

ExtendedLatent::ExtendedLatent(torch::Tensor rows) : rows_(std::move(rows)) {
  if (rows_.dim() != 3 || rows_.size(0) < 1 || rows_.size(1) < 1) {
    throw InvalidArgument("ExtendedLatent expects a [batch, n, dim] tensor");
  }
}

ExtendedLatent ExtendedLatent::at(int64_t index) const {
  return ExtendedLatent(rows_.slice(0, index, index + 1));
}

bool ExtendedLatent::is_repeat_extended(double tol) const {
  auto first = rows_.select(1, 0).unsqueeze(1);
  return (rows_ - first).abs().max().item<double>() <= tol;
}

LatentSampler::LatentSampler(uint64_t seed, int64_t dim)
    : dim_(dim), gen_(at::detail::createCPUGenerator(seed)) {
  if (dim < 1) throw InvalidArgument("latent dimension must be positive");
}

torch::Tensor LatentSampler::sample(int64_t count) {
  if (count < 1) throw InvalidArgument("sample count must be >= 1");
  return normal({count, dim_});
}

torch::Tensor LatentSampler::normal(at::IntArrayRef shape) {
  return at::randn(shape, gen_, torch::TensorOptions().dtype(torch::kFloat32));
}

torch::Tensor sample_z(int64_t count, uint64_t seed, int64_t dim) {
  LatentSampler sampler(seed, dim);
  return sampler.sample(count);
}

ExtendedLatent extend_repeat(const torch::Tensor& z, int64_t n) {
  if (n < 1) throw InvalidArgument("extend_repeat needs n >= 1");
  auto batched = z.dim() == 1 ? z.unsqueeze(0) : z;
  if (batched.dim() != 2) throw InvalidArgument("extend_repeat expects [dim] or [batch, dim]");
  return ExtendedLatent(batched.unsqueeze(1).expand({batched.size(0), n, batched.size(1)}).contiguous());
}

ExtendedLatent stack_zplus(const std::vector<torch::Tensor>& codes, int64_t expected_layers) {
  if (codes.empty()) throw InvalidArgument("stack_zplus needs at least one code");
  if (expected_layers > 0 && static_cast<int64_t>(codes.size()) != expected_layers) {
    throw InvalidArgument("stack_zplus got " + std::to_string(codes.size()) + " codes for a " +
                          std::to_string(expected_layers) + "-layer generator");
  }
  for (const auto& c : codes) {
    if (c.dim() != 1 || c.size(0) != codes.front().size(0)) {
      throw InvalidArgument("stack_zplus codes must be 1-D and equally sized");
    }
  }
  return ExtendedLatent(torch::stack(codes).unsqueeze(0));
}

}  // namespace ctlgan
