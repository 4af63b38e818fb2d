#include "ctlgan/errors.hpp"
#include "ctlgan/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ctlgan {

namespace {

torch::Tensor squared_distances(const torch::Tensor& x) {
  auto sq = x.pow(2).sum(1, /*keepdim=*/true);
  return (sq + sq.t() - 2.0 * x.matmul(x.t())).clamp_min(0.0);
}

// Row-wise Gaussian conditionals whose entropy matches log(perplexity), by bisection on beta.
torch::Tensor conditional_affinities(const torch::Tensor& d2, double perplexity) {
  const int64_t n = d2.size(0);
  const double target = std::log(perplexity);
  auto p = torch::zeros_like(d2);
  auto d_acc = d2.accessor<double, 2>();
  auto p_acc = p.accessor<double, 2>();
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = INFINITY;
    for (int iter = 0; iter < 100; ++iter) {
      double dmin = INFINITY;
      for (int64_t j = 0; j < n; ++j) {
        if (j != i) dmin = std::min(dmin, d_acc[i][j]);
      }
      double sum = 0.0, weighted = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        row[static_cast<size_t>(j)] = j == i ? 0.0 : std::exp(-beta * (d_acc[i][j] - dmin));
        sum += row[static_cast<size_t>(j)];
        weighted += row[static_cast<size_t>(j)] * (d_acc[i][j] - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (int64_t j = 0; j < n; ++j) p_acc[i][j] = row[static_cast<size_t>(j)] / sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  return p;
}

}  // namespace

torch::Tensor tsne_embed(const torch::Tensor& points, const TsneOptions& options) {
  if (points.dim() != 2) throw InvalidArgument("t-SNE expects [N, D] points");
  const int64_t n = points.size(0);
  if (n < 4) throw InvalidArgument("t-SNE needs at least four points");
  if (options.perplexity <= 0.0) throw InvalidArgument("t-SNE perplexity must be positive");
  torch::NoGradGuard no_grad;
  auto x = points.to(torch::kFloat64);
  x = x - x.mean(0, true);
  const double scale = x.abs().max().item<double>();
  if (scale > 0) x = x / scale;

  const double perplexity = std::min(options.perplexity, static_cast<double>(n - 1) / 3.0);
  auto p = conditional_affinities(squared_distances(x), perplexity);
  p = (p + p.t()) / (2.0 * static_cast<double>(n));
  p = p.clamp_min(1e-12);

  const double learning_rate = options.learning_rate > 0.0
                                   ? options.learning_rate
                                   : std::max(static_cast<double>(n) / (4.0 * options.early_exaggeration), 50.0);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  auto y = 1e-4 * torch::randn({n, 2}, gen, torch::dtype(torch::kFloat64));
  auto velocity = torch::zeros_like(y);
  auto gains = torch::ones_like(y);
  auto off_diag = 1.0 - torch::eye(n, y.options());

  for (int64_t it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    auto num = off_diag / (1.0 + squared_distances(y));
    auto q = (num / num.sum()).clamp_min(1e-12);
    auto coeff = (exaggeration * p - q) * num;
    auto grad = 4.0 * (coeff.sum(1, true) * y - coeff.matmul(y));
    auto same_sign = (grad > 0) == (velocity > 0);
    gains = torch::where(same_sign, gains * 0.8, gains + 0.2).clamp_min(0.01);
    velocity = momentum * velocity - learning_rate * gains * grad;
    y = y + velocity;
    y = y - y.mean(0, true);
  }
  if (!torch::isfinite(y).all().item<bool>()) throw NumericFailure("t-SNE diverged");
  return y.contiguous();
}

}  // namespace ctlgan
