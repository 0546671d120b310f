#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "deffiller/error.hpp"
#include "deffiller/metrics.hpp"

namespace deffiller::metrics {

namespace {

constexpr double kEigenTolerance = 1e-8;
constexpr double kNegativeFidTolerance = 1e-6;

// Eigenvalues of a symmetric PSD matrix with round-off negatives clamped to 0.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  require(solver.info() == Eigen::Success, "eigendecomposition of {} failed", what);
  const double top = std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  const double lowest = solver.eigenvalues().minCoeff();
  require(lowest >= -kEigenTolerance * top, "{} has eigenvalue {} and is not positive semidefinite", what, lowest);
  return solver;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const auto solver = psd_eigen(m, "covariance");
  const Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

GaussianMoments moments(const FeatureSet& set) {
  require(set.count() >= 2, "Gaussian fit needs at least 2 feature rows, got {}", set.count());
  require(set.features.allFinite(), "feature set holds non-finite values");
  GaussianMoments m;
  m.mean = set.features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = set.features.rowwise() - m.mean.transpose();
  m.covariance = centered.transpose() * centered / static_cast<double>(set.count() - 1);
  return m;
}

double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(),
          "trace_sqrt_product needs square matrices of equal size");
  const Eigen::MatrixXd root_b = psd_sqrt(b);
  const auto solver = psd_eigen(root_b * a * root_b, "covariance product");
  return solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

double fid_from_moments(const GaussianMoments& real, const GaussianMoments& generated) {
  require(real.mean.size() == generated.mean.size(), "feature widths differ: {} vs {}", real.mean.size(),
          generated.mean.size());
  const double mean_term = (real.mean - generated.mean).squaredNorm();
  const double trace_term = real.covariance.trace() + generated.covariance.trace() -
                            2.0 * trace_sqrt_product(real.covariance, generated.covariance);
  const double value = mean_term + trace_term;
  require(value >= -kNegativeFidTolerance, "Frechet distance came out negative ({})", value);
  return std::max(0.0, value);
}

double fid(const FeatureSet& real, const FeatureSet& generated) {
  require(real.extractor_id == generated.extractor_id, "feature sets come from different extractors ('{}' vs '{}')",
          real.extractor_id, generated.extractor_id);
  require(real.dim() == generated.dim(), "feature widths differ: {} vs {}", real.dim(), generated.dim());
  return fid_from_moments(moments(real), moments(generated));
}

}  // namespace deffiller::metrics
