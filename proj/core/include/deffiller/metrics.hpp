#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace deffiller::metrics {

/// A saliency prediction and its binary ground truth, both row-major H x W.
/// Predictions are clamped to [0, 1]; ground truth must be 0/1.
class SaliencyEval {
 public:
  SaliencyEval(std::vector<double> prediction, std::vector<std::uint8_t> ground_truth, int height,
               int width);
  SaliencyEval(std::span<const float> prediction, std::span<const float> ground_truth, int height,
               int width);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return prediction_.size(); }
  std::span<const double> prediction() const { return prediction_; }
  std::span<const std::uint8_t> ground_truth() const { return ground_truth_; }
  std::size_t foreground_count() const;

 private:
  std::vector<double> prediction_;
  std::vector<std::uint8_t> ground_truth_;
  int height_;
  int width_;
};

inline constexpr int kThresholdCount = 256;
inline constexpr double kBetaSquared = 0.3;

/// k / 256 for k = 0..255. A pixel is foreground at threshold tau when
/// prediction > tau.
std::vector<double> default_thresholds();

/// Mean absolute error.
double mae(const SaliencyEval& eval);

/// Max over thresholds of (1 + b2) P R / (b2 P + R); 0 where nothing is
/// predicted or nothing is hit. Throws on an all-zero ground truth.
double f_measure_max(const SaliencyEval& eval, double beta_squared = kBetaSquared);
double f_measure_max(const SaliencyEval& eval, double beta_squared, std::span<const double> thresholds);

/// Structure measure alpha * S_object + (1 - alpha) * S_region.
double s_measure(const SaliencyEval& eval, double alpha = 0.5);

/// Enhanced-alignment measure of a binary map against the ground truth.
double e_measure(std::span<const std::uint8_t> binary_prediction, std::span<const std::uint8_t> ground_truth);

/// Max over thresholds of the enhanced-alignment measure.
double e_measure_max(const SaliencyEval& eval);
double e_measure_max(const SaliencyEval& eval, std::span<const double> thresholds);

/// Embeddings of an image set, one row per image.
struct FeatureSet {
  Eigen::MatrixXd features;
  std::string extractor_id;

  Eigen::Index count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased (N - 1)
};

GaussianMoments moments(const FeatureSet& set);

/// ||mu_r - mu_g||^2 + Tr(C_r + C_g - 2 (C_r C_g)^{1/2}).
double fid_from_moments(const GaussianMoments& real, const GaussianMoments& generated);

/// Frechet distance between Gaussian fits. Both sets need >= 2 rows, the same
/// width, and the same extractor id.
double fid(const FeatureSet& real, const FeatureSet& generated);

/// Trace of the principal square root of A B for symmetric PSD A, B,
/// computed as tr sqrt(B^{1/2} A B^{1/2}).
double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// One row of a detection report.
struct SaliencyScores {
  double s_alpha = 0.0;
  double mae = 0.0;
  double e_max = 0.0;
  double f_max = 0.0;
  int count = 0;
  /// Pairs skipped for the F-measure because their ground truth is empty.
  int f_excluded = 0;
};

/// Running means of the four saliency metrics.
class SaliencyAccumulator {
 public:
  void add(const SaliencyEval& eval);
  SaliencyScores scores() const;

 private:
  double s_sum_ = 0.0;
  double mae_sum_ = 0.0;
  double e_sum_ = 0.0;
  double f_sum_ = 0.0;
  int count_ = 0;
  int f_count_ = 0;
  int f_excluded_ = 0;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string split_id;
  std::string config_hash;
};

/// Per-category and aggregate values. Aggregate uses the key "all".
struct MetricReport {
  std::map<std::string, SaliencyScores> saliency;
  std::map<std::string, double> fid;
  std::string extractor_id;
  Provenance provenance;

  /// Rows "category,metric,value" with a header line.
  std::string to_csv() const;
  /// Human-readable table with columns S_alpha, M, E_max, F_max.
  std::string to_table() const;
};

}  // namespace deffiller::metrics
