#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/error.hpp"
#include "deffiller/features.hpp"
#include "deffiller/metrics.hpp"
#include "deffiller/random.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace deffiller;
using namespace deffiller::metrics;

namespace {

SaliencyEval make_eval(const Eigen::MatrixXd& pred, const Eigen::MatrixXi& gt) {
  std::vector<double> p;
  std::vector<std::uint8_t> g;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      p.push_back(pred(r, c));
      g.push_back(static_cast<std::uint8_t>(gt(r, c)));
    }
  }
  return {std::move(p), std::move(g), static_cast<int>(pred.rows()), static_cast<int>(pred.cols())};
}

FeatureSet features(Eigen::MatrixXd rows) { return {std::move(rows), "test"}; }

Eigen::MatrixXi half_plane(int n) {
  Eigen::MatrixXi gt = Eigen::MatrixXi::Zero(n, n);
  gt.leftCols(n / 2).setOnes();
  return gt;
}

}  // namespace

TEST(Mae, ClosedForms) {
  const auto gt = half_plane(8);
  const Eigen::MatrixXd exact = gt.cast<double>();
  EXPECT_EQ(mae(make_eval(exact, gt)), 0.0);
  EXPECT_EQ(mae(make_eval(1.0 - exact.array(), gt)), 1.0);
  EXPECT_EQ(mae(make_eval(Eigen::MatrixXd::Constant(8, 8, 0.5), gt)), 0.5);
}

TEST(FMeasure, PerfectAndEmptyPrediction) {
  const auto gt = half_plane(8);
  EXPECT_NEAR(f_measure_max(make_eval(gt.cast<double>(), gt)), 1.0, 1e-12);
  EXPECT_EQ(f_measure_max(make_eval(Eigen::MatrixXd::Zero(8, 8), gt)), 0.0);
  EXPECT_THROW(f_measure_max(make_eval(Eigen::MatrixXd::Zero(8, 8), Eigen::MatrixXi::Zero(8, 8))), Error);
}

TEST(FMeasure, HandCaseFourByFour) {
  Eigen::MatrixXi gt = Eigen::MatrixXi::Zero(4, 4);
  gt.leftCols(2).setOnes();
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(4, 4);
  pred.leftCols(2).setConstant(0.8);
  pred.block(0, 2, 2, 2).setConstant(0.6);
  const double f = f_measure_max(make_eval(pred, gt));
  EXPECT_NEAR(f, oracle::f_measure_max(pred, gt), 1e-12);
  // Only 0.6 < tau < 0.8 isolates the left half.
  EXPECT_NEAR(f, 1.0, 1e-12);
}

TEST(SMeasure, PerfectAndInvertedHalfPlane) {
  const auto gt = half_plane(8);
  EXPECT_NEAR(s_measure(make_eval(gt.cast<double>(), gt)), 1.0, 1e-6);
  const Eigen::MatrixXd inverted = 1.0 - gt.cast<double>().array();
  EXPECT_NEAR(s_measure(make_eval(inverted, gt)), oracle::s_measure(inverted, gt), 1e-12);
  EXPECT_LT(s_measure(make_eval(inverted, gt)), 0.1);
}

TEST(SMeasure, DegenerateGroundTruth) {
  const Eigen::MatrixXd pred = Eigen::MatrixXd::Constant(4, 4, 0.25);
  EXPECT_DOUBLE_EQ(s_measure(make_eval(pred, Eigen::MatrixXi::Zero(4, 4))), 0.75);
  EXPECT_DOUBLE_EQ(s_measure(make_eval(pred, Eigen::MatrixXi::Ones(4, 4))), 0.25);
}

TEST(EMeasure, PerfectAndInverted) {
  const auto gt = half_plane(8);
  EXPECT_NEAR(e_measure_max(make_eval(gt.cast<double>(), gt)), 1.0, 1e-6);
  const Eigen::MatrixXd inverted = 1.0 - gt.cast<double>().array();
  EXPECT_NEAR(e_measure_max(make_eval(inverted, gt)), oracle::e_measure_max(inverted, gt), 1e-12);
}

TEST(SaliencyOracles, RandomEightByEight) {
  auto rng = make_generator(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = torch::rand({8, 8}, rng, torch::kFloat64);
    const auto density = torch::rand({1}, rng, torch::kFloat64).item<double>();
    const auto g = (torch::rand({8, 8}, rng, torch::kFloat64) < density).to(torch::kFloat64);
    const Eigen::MatrixXd pred = fixture::to_matrix(p);
    const Eigen::MatrixXi gt = fixture::to_matrix(g).cast<int>();
    const auto eval = make_eval(pred, gt);
    EXPECT_NEAR(s_measure(eval), oracle::s_measure(pred, gt), 1e-6) << "trial " << trial;
    EXPECT_NEAR(mae(eval), oracle::mae(pred, gt), 1e-6);
    EXPECT_NEAR(e_measure_max(eval), oracle::e_measure_max(pred, gt), 1e-6);
    if (gt.sum() > 0) EXPECT_NEAR(f_measure_max(eval), oracle::f_measure_max(pred, gt), 1e-6);
  }
}

TEST(SaliencyEval, ValidatesInput) {
  EXPECT_THROW(SaliencyEval(std::vector<double>(3, 0.0), std::vector<std::uint8_t>(4, 0), 2, 2), Error);
  EXPECT_THROW(SaliencyEval(std::vector<double>(4, 0.0), std::vector<std::uint8_t>{0, 1, 2, 0}, 2, 2), Error);
  const SaliencyEval clamped(std::vector<double>{-1.0, 2.0, 0.5, 0.5}, std::vector<std::uint8_t>{0, 1, 0, 1}, 2, 2);
  EXPECT_EQ(clamped.prediction()[0], 0.0);
  EXPECT_EQ(clamped.prediction()[1], 1.0);
}

TEST(Accumulator, ExcludesEmptyGroundTruthFromF) {
  SaliencyAccumulator acc;
  const auto gt = half_plane(4);
  acc.add(make_eval(gt.cast<double>(), gt));
  acc.add(make_eval(Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXi::Zero(4, 4)));
  const auto s = acc.scores();
  EXPECT_EQ(s.count, 2);
  EXPECT_EQ(s.f_excluded, 1);
  EXPECT_NEAR(s.f_max, 1.0, 1e-12);
  EXPECT_NEAR(s.mae, 0.0, 1e-12);
}

TEST(Fid, IdenticalSetsGiveZero) {
  auto rng = make_generator(3);
  const auto x = fixture::to_matrix(torch::randn({50, 6}, rng, torch::kFloat64));
  EXPECT_LE(std::abs(fid(features(x), features(x))), 1e-6);
}

TEST(Fid, OneDimensionalClosedForms) {
  // Two-point samples with unbiased variance 1: {m - 1/sqrt2, m + 1/sqrt2}.
  const double a = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXd r(2, 1), shifted(2, 1), wide(2, 1);
  r << -a, a;
  shifted << 3 - a, 3 + a;
  wide << -2 * a, 2 * a;
  EXPECT_NEAR(fid(features(r), features(shifted)), 9.0, 1e-9);
  EXPECT_NEAR(fid(features(r), features(wide)), 1.0, 1e-9);
}

TEST(Fid, DiagonalOracleAndSymmetry) {
  auto rng = make_generator(5);
  for (int trial = 0; trial < 20; ++trial) {
    GaussianMoments a;
    GaussianMoments b;
    a.mean = fixture::to_matrix(torch::randn({3, 1}, rng, torch::kFloat64)).col(0);
    b.mean = fixture::to_matrix(torch::randn({3, 1}, rng, torch::kFloat64)).col(0);
    const Eigen::VectorXd va = fixture::to_matrix(torch::rand({3, 1}, rng, torch::kFloat64) * 4 + 0.1).col(0);
    const Eigen::VectorXd vb = fixture::to_matrix(torch::rand({3, 1}, rng, torch::kFloat64) * 4 + 0.1).col(0);
    a.covariance = va.asDiagonal();
    b.covariance = vb.asDiagonal();
    EXPECT_NEAR(fid_from_moments(a, b), oracle::fid_diagonal(a.mean, va, b.mean, vb), 1e-6);
  }
  const auto x = fixture::to_matrix(torch::randn({40, 5}, rng, torch::kFloat64));
  const auto y = fixture::to_matrix(torch::randn({30, 5}, rng, torch::kFloat64) * 2 + 1);
  EXPECT_NEAR(fid(features(x), features(y)), fid(features(y), features(x)), 1e-6);
}

TEST(Fid, Guards) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
  EXPECT_THROW(fid(FeatureSet{x, "a"}, FeatureSet{x, "b"}), Error);
  EXPECT_THROW(fid(features(x), features(Eigen::MatrixXd::Random(5, 4))), Error);
  EXPECT_THROW(fid(features(x.topRows(1)), features(x)), Error);
}

TEST(Fid, TraceSqrtOfCommutingProduct) {
  const Eigen::MatrixXd a = Eigen::Vector3d(1, 4, 9).asDiagonal();
  const Eigen::MatrixXd b = Eigen::Vector3d(4, 1, 1).asDiagonal();
  EXPECT_NEAR(trace_sqrt_product(a, b), 2 + 2 + 3, 1e-12);
}

TEST(Features, ShapeDeterminismAndId) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  const auto images = synth_dataset(2, 0, 64).images();
  const auto f = extract_features(params, images);
  EXPECT_EQ(f.count(), 6);
  EXPECT_EQ(f.dim(), 64);
  EXPECT_EQ(f.features, extract_features(params, images).features);
  EXPECT_EQ(f.extractor_id, extractor_id(params));
  const auto other = make_autoencoder(AutoencoderConfig{}, 1);
  EXPECT_NE(extractor_id(other), f.extractor_id);
  EXPECT_THROW(fid(f, extract_features(other, images)), Error);
}

TEST(Report, CsvHoldsEveryMetric) {
  MetricReport report;
  report.saliency["all"] = SaliencyScores{0.9, 0.1, 0.8, 0.7, 4, 0};
  report.fid["inclusion"] = 12.5;
  const auto csv = report.to_csv();
  for (const char* key : {"s_alpha", "mae", "e_max", "f_max", "fid"}) EXPECT_NE(csv.find(key), std::string::npos);
  EXPECT_NE(report.to_table().find("S_alpha"), std::string::npos);
}
