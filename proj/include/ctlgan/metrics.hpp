#pragma once

#include "ctlgan/latent.hpp"
#include "ctlgan/perceptual.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ctlgan {

/// Evaluation summary. A field is empty when its metric was not requested.
struct MetricsReport {
  std::optional<double> fid;
  std::optional<double> lpips_distance_mean;
  std::optional<double> lpips_cluster_mean;
  std::optional<double> lpips_cluster_std;
  std::map<std::string, int64_t> counts;
};

/// Keys: fid, lpips_distance_mean, lpips_cluster_mean, lpips_cluster_std, counts.
nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Frechet distance between Gaussian fits (unbiased covariance) of two [N, d] feature sets.
/// Needs N, M >= 2. Throws InvalidArgument on a d mismatch, NumericFailure on a clearly
/// indefinite covariance product.
double fid(const torch::Tensor& feats_a, const torch::Tensor& feats_b);

/// FID features: the backbone's penultimate tap, globally average-pooled, as [N, C] float64.
torch::Tensor fid_features(const torch::Tensor& images, const FeatureBackbone& backbone, int64_t chunk = 64);

/// Mean per-pair LPIPS between paired inputs and outputs.
double lpips_distance_eval(const torch::Tensor& inputs, const torch::Tensor& outputs, const FeatureBackbone& backbone,
                           const PerceptualWeights& weights);

struct ClusterStats {
  double mean = 0.0;
  double std = 0.0;                  // population std across clusters that have pairs
  std::vector<int64_t> assignment;   // generated image -> training index
  std::vector<int64_t> cluster_sizes;
  int64_t clusters_with_pairs = 0;
};

/// Intra-cluster pairwise LPIPS: each generated image joins its nearest training image (ties to
/// the lowest index); clusters with >= 2 members contribute their mean pairwise distance.
/// Throws UndefinedMetric when no cluster has two members.
ClusterStats lpips_cluster(const torch::Tensor& generated, const torch::Tensor& training,
                           const FeatureBackbone& backbone, const PerceptualWeights& weights);

/// Moments of a latent population whose samples are the individual latent rows.
struct MomentStats {
  double mean_norm = 0.0;            // ||mean||_2
  double covariance_distance = 0.0;  // ||Cov - I||_F, unbiased covariance
  int64_t samples = 0;
};

/// Accepts [N, d] codes or [N, n, d] Z+ codes (every row is one sample).
MomentStats latent_moments(const torch::Tensor& codes);

struct TsneOptions {
  double perplexity = 30.0;
  int64_t iterations = 500;
  double learning_rate = 0.0;  // 0: max(N / (4 * early_exaggeration), 50)
  double early_exaggeration = 12.0;
  int64_t exaggeration_iterations = 100;
  uint64_t seed = 0;
};

/// Exact t-SNE of [N, D] points into 2-D; returns [N, 2] float64.
torch::Tensor tsne_embed(const torch::Tensor& points, const TsneOptions& options = {});

struct EmbeddingRow {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

struct LatentDiagnostic {
  std::vector<EmbeddingRow> rows;
  std::map<std::string, MomentStats> moments;
};

/// 2-D neighbor embedding of flattened codes plus per-label moment statistics. Every group
/// needs >= 10 codes; at least two groups are required.
LatentDiagnostic latent_diagnostic_export(const std::vector<std::pair<std::string, ExtendedLatent>>& groups,
                                          const TsneOptions& options = {});

/// "x,y,label" lines with a header row.
std::string embedding_csv(const std::vector<EmbeddingRow>& rows);

}  // namespace ctlgan
