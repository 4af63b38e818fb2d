#include "ctlgan/metrics.hpp"

#include "ctlgan/errors.hpp"

#include <cmath>
#include <sstream>

namespace ctlgan {

nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"fid", opt(r.fid)},
          {"lpips_distance_mean", opt(r.lpips_distance_mean)},
          {"lpips_cluster_mean", opt(r.lpips_cluster_mean)},
          {"lpips_cluster_std", opt(r.lpips_cluster_std)},
          {"counts", r.counts}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  MetricsReport r;
  r.fid = opt("fid");
  r.lpips_distance_mean = opt("lpips_distance_mean");
  r.lpips_cluster_mean = opt("lpips_cluster_mean");
  r.lpips_cluster_std = opt("lpips_cluster_std");
  if (j.contains("counts")) r.counts = j.at("counts").get<std::map<std::string, int64_t>>();
  return r;
}

namespace {

torch::Tensor covariance(const torch::Tensor& x) {
  auto centered = x - x.mean(0, /*keepdim=*/true);
  return centered.t().matmul(centered) / static_cast<double>(x.size(0) - 1);
}

torch::Tensor psd_sqrt(const torch::Tensor& sym) {
  auto [evals, evecs] = torch::linalg_eigh(sym);
  return evecs.matmul(torch::diag(evals.clamp_min(0.0).sqrt())).matmul(evecs.t());
}

}  // namespace

double fid(const torch::Tensor& feats_a, const torch::Tensor& feats_b) {
  if (feats_a.dim() != 2 || feats_b.dim() != 2) throw InvalidArgument("fid expects [N, d] feature matrices");
  if (feats_a.size(1) != feats_b.size(1)) throw InvalidArgument("fid: feature dimensions differ");
  if (feats_a.size(0) < 2 || feats_b.size(0) < 2) throw InvalidArgument("fid needs at least two samples per set");
  auto a = feats_a.to(torch::kFloat64);
  auto b = feats_b.to(torch::kFloat64);
  if (!torch::isfinite(a).all().item<bool>() || !torch::isfinite(b).all().item<bool>()) {
    throw NumericFailure("fid: non-finite features");
  }
  const auto mean_term = (a.mean(0) - b.mean(0)).pow(2).sum().item<double>();
  auto cov_a = covariance(a);
  auto cov_b = covariance(b);
  auto root_a = psd_sqrt(cov_a);
  auto product = root_a.matmul(cov_b).matmul(root_a);
  product = 0.5 * (product + product.t());
  auto evals = torch::linalg_eigvalsh(product);
  const double largest = std::max(1.0, evals.abs().max().item<double>());
  if (evals.min().item<double>() < -1e-6 * largest) throw NumericFailure("fid: covariance product is not PSD");
  const auto trace_sqrt = evals.clamp_min(1e-10).sqrt().sum().item<double>();
  const auto value = mean_term + cov_a.trace().item<double>() + cov_b.trace().item<double>() - 2.0 * trace_sqrt;
  if (!std::isfinite(value)) throw NumericFailure("fid is not finite");
  return std::max(0.0, value);
}

torch::Tensor fid_features(const torch::Tensor& images, const FeatureBackbone& backbone, int64_t chunk) {
  if (backbone.tap_channels().size() < 2) throw InvalidArgument("fid features need a backbone with >= 2 taps");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += chunk) {
    auto taps = backbone.features(images.slice(0, i, std::min(i + chunk, images.size(0))));
    parts.push_back(taps[taps.size() - 2].mean({2, 3}).to(torch::kFloat64));
  }
  return torch::cat(parts);
}

double lpips_distance_eval(const torch::Tensor& inputs, const torch::Tensor& outputs, const FeatureBackbone& backbone,
                           const PerceptualWeights& weights) {
  if (inputs.size(0) != outputs.size(0)) throw InvalidArgument("lpips distance: input/output counts differ");
  if (inputs.size(0) < 1) throw InvalidArgument("lpips distance needs at least one pair");
  torch::NoGradGuard no_grad;
  return lpips(inputs, outputs, backbone, weights).to(torch::kFloat64).mean().item<double>();
}

ClusterStats lpips_cluster(const torch::Tensor& generated, const torch::Tensor& training,
                           const FeatureBackbone& backbone, const PerceptualWeights& weights) {
  if (training.size(0) < 1) throw InvalidArgument("lpips cluster needs at least one training image");
  if (generated.size(0) < training.size(0)) throw InvalidArgument("lpips cluster needs >= K generated images");
  torch::NoGradGuard no_grad;
  // Features are computed one image at a time so every distance matches a standalone lpips() call.
  auto per_image = [&](const torch::Tensor& images) {
    std::vector<std::vector<torch::Tensor>> out;
    for (int64_t i = 0; i < images.size(0); ++i) out.push_back(backbone.features(images.slice(0, i, i + 1)));
    return out;
  };
  const auto gen_feats = per_image(generated);
  const auto train_feats = per_image(training);
  auto distance = [&](const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    return lpips_from_features(a, b, weights).item<double>();
  };

  const auto k = static_cast<int64_t>(train_feats.size());
  ClusterStats stats;
  stats.cluster_sizes.assign(static_cast<size_t>(k), 0);
  std::vector<std::vector<int64_t>> members(static_cast<size_t>(k));
  for (size_t g = 0; g < gen_feats.size(); ++g) {
    int64_t best = 0;
    double best_d = distance(gen_feats[g], train_feats[0]);
    for (int64_t t = 1; t < k; ++t) {
      const double d = distance(gen_feats[g], train_feats[static_cast<size_t>(t)]);
      if (d < best_d) {
        best_d = d;
        best = t;
      }
    }
    stats.assignment.push_back(best);
    members[static_cast<size_t>(best)].push_back(static_cast<int64_t>(g));
    ++stats.cluster_sizes[static_cast<size_t>(best)];
  }

  std::vector<double> cluster_means;
  for (const auto& m : members) {
    if (m.size() < 2) continue;
    double sum = 0.0;
    int64_t pairs = 0;
    for (size_t i = 0; i < m.size(); ++i) {
      for (size_t j = i + 1; j < m.size(); ++j) {
        sum += distance(gen_feats[static_cast<size_t>(m[i])], gen_feats[static_cast<size_t>(m[j])]);
        ++pairs;
      }
    }
    cluster_means.push_back(sum / static_cast<double>(pairs));
  }
  if (cluster_means.empty()) throw UndefinedMetric("lpips cluster: no cluster has two or more members");
  double total = 0.0;
  for (double v : cluster_means) total += v;
  stats.mean = total / static_cast<double>(cluster_means.size());
  double var = 0.0;
  for (double v : cluster_means) var += (v - stats.mean) * (v - stats.mean);
  stats.std = std::sqrt(var / static_cast<double>(cluster_means.size()));
  stats.clusters_with_pairs = static_cast<int64_t>(cluster_means.size());
  return stats;
}

MomentStats latent_moments(const torch::Tensor& codes) {
  if (codes.dim() != 2 && codes.dim() != 3) throw InvalidArgument("latent moments expect [N, d] or [N, n, d]");
  auto rows = codes.reshape({-1, codes.size(-1)}).to(torch::kFloat64);
  if (rows.size(0) < 2) throw InvalidArgument("latent moments need at least two samples");
  MomentStats m;
  m.samples = rows.size(0);
  m.mean_norm = rows.mean(0).norm().item<double>();
  auto eye = torch::eye(rows.size(1), rows.options());
  m.covariance_distance = (covariance(rows) - eye).norm().item<double>();
  return m;
}

LatentDiagnostic latent_diagnostic_export(const std::vector<std::pair<std::string, ExtendedLatent>>& groups,
                                          const TsneOptions& options) {
  if (groups.size() < 2) throw InvalidArgument("latent diagnostic needs at least two labels");
  LatentDiagnostic out;
  std::vector<torch::Tensor> flat;
  std::vector<std::string> labels;
  for (const auto& [label, codes] : groups) {
    if (codes.batch() < 10) throw InvalidArgument("latent diagnostic needs >= 10 codes for label '" + label + "'");
    if (!flat.empty() && codes.rows()[0].numel() != flat.front().size(1)) {
      throw InvalidArgument("latent diagnostic codes must share one shape");
    }
    out.moments[label] = latent_moments(codes.rows());
    flat.push_back(codes.rows().flatten(1).to(torch::kFloat64));
    labels.insert(labels.end(), static_cast<size_t>(codes.batch()), label);
  }
  auto embedded = tsne_embed(torch::cat(flat), options);
  auto acc = embedded.accessor<double, 2>();
  for (int64_t i = 0; i < embedded.size(0); ++i) {
    out.rows.push_back({acc[i][0], acc[i][1], labels[static_cast<size_t>(i)]});
  }
  return out;
}

std::string embedding_csv(const std::vector<EmbeddingRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "x,y,label\n";
  for (const auto& r : rows) os << r.x << ',' << r.y << ',' << r.label << '\n';
  return os.str();
}

}  // namespace ctlgan
