#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

namespace ctlgan::testing {

/// Scratch directory for one test, wiped on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("CTLGAN_TEST_TMP");
  std::filesystem::path base = root ? root : std::filesystem::temp_directory_path() / "ctlgan_tests";
  auto dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

struct GradCheck {
  double max_rel_error = 0.0;
  int64_t checked = 0;
};

/// Compares the autograd gradient of scalar f at x (float64) with central differences on up to
/// `max_entries` evenly spaced coordinates. Relative error uses max(|a|, |n|, floor) as scale.
inline GradCheck gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                                double h = 1e-6, int64_t max_entries = 48, double floor = 1e-6) {
  auto x = x0.detach().clone().to(torch::kFloat64).set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach().flatten();
  auto flat = x.detach().flatten();
  const int64_t total = flat.numel();
  const int64_t stride = std::max<int64_t>(1, total / max_entries);
  GradCheck out;
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < total; i += stride) {
    auto xp = flat.clone();
    auto xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(xp.view(x0.sizes())).item<double>();
    const double fm = f(xm.view(x0.sizes())).item<double>();
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic[i].item<double>();
    const double scale = std::max({std::abs(a), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace ctlgan::testing
