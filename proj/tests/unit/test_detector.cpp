#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/detector.hpp"
#include "deffiller/error.hpp"
#include "deffiller/image_io.hpp"
#include "deffiller/metrics.hpp"
#include "deffiller/random.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace deffiller;

namespace {

DetectorConfig quick_config(int steps) {
  auto c = DetectorConfig::csepnet_like();
  c.max_steps = steps;
  c.base_channels = 8;
  return c;
}

}  // namespace

TEST(Detector, EmptySetThrows) { EXPECT_THROW(train_detector(PairSet{}, quick_config(1), 0), Error); }

TEST(Detector, TrainingIsDeterministic) {
  const auto set = synth_dataset(2, 0, 32);
  const auto a = train_detector(set, quick_config(10), 3);
  const auto b = train_detector(set, quick_config(10), 3);
  const auto pa = a.net->parameters();
  const auto pb = b.net->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i], pb[i]));
  EXPECT_EQ(a.losses, b.losses);
}

TEST(Detector, PredictionRangeAndRepeat) {
  const auto params = train_detector(synth_dataset(1, 0, 32), quick_config(2), 0);
  const auto image = torch::rand({1, 32, 32}) * 2 - 1;
  const auto map = predict_saliency(params, image);
  EXPECT_EQ(map.sizes(), (std::vector<std::int64_t>{32, 32}));
  EXPECT_GE(map.min().item<float>(), 0.0f);
  EXPECT_LE(map.max().item<float>(), 1.0f);
  EXPECT_TRUE(torch::equal(map, predict_saliency(params, image)));
}

TEST(Detector, EvaluationIsPure) {
  const auto set = synth_dataset(2, 1, 32);
  const auto params = train_detector(set, quick_config(5), 0);
  EXPECT_EQ(evaluate_detector(params, set).to_csv(), evaluate_detector(params, set).to_csv());
}

TEST(Detector, OverfitReachesLowError) {
  const auto set = synth_dataset(6, 0, 64);  // 18 pairs
  auto config = DetectorConfig::csepnet_like();
  config.max_steps = 1000;
  const auto params = train_detector(set, config, 0);
  const auto& losses = params.losses;
  ASSERT_GE(losses.size(), 20u);
  double head = 0;
  double tail = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_LE(evaluate_detector(params, set).saliency.at("all").mae, 0.05);
}

TEST(Evaluate, OracleAndConstantPredictors) {
  const auto set = synth_dataset(2, 4, 32);
  const auto perfect = evaluate_predictor([](const MaskImagePair& p) { return p.mask; }, set).saliency.at("all");
  EXPECT_NEAR(perfect.s_alpha, 1.0, 1e-6);
  EXPECT_NEAR(perfect.mae, 0.0, 1e-12);
  EXPECT_NEAR(perfect.e_max, 1.0, 1e-6);
  EXPECT_NEAR(perfect.f_max, 1.0, 1e-6);
  const auto half =
      evaluate_predictor([](const MaskImagePair& p) { return torch::full_like(p.mask, 0.5); }, set).saliency.at("all");
  EXPECT_EQ(half.mae, 0.5);
}

TEST(Evaluate, RandomPredictorMatchesOracleAggregation) {
  std::vector<MaskImagePair> small;
  for (const auto& p : synth_dataset(3, 2, 16)) {
    auto q = p;
    q.mask = image_io::resize_nearest(p.mask, 8, 8);
    q.image = image_io::resize_bilinear(p.image, 8, 8);
    small.push_back(q);
  }
  const PairSet set(std::move(small), 8);
  auto rng = make_generator(8);
  std::vector<torch::Tensor> maps;
  for (std::size_t i = 0; i < set.size(); ++i) maps.push_back(torch::rand({8, 8}, rng, torch::kFloat64));
  std::size_t next = 0;
  const auto report = evaluate_predictor([&](const MaskImagePair&) { return maps[next++]; }, set);
  for (const auto& category : default_categories()) {
    double s = 0, m = 0, e = 0, f = 0;
    int n = 0;
    int n_f = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set[i].category != category) continue;
      const auto pred = fixture::to_matrix(maps[i]);
      const Eigen::MatrixXi gt = fixture::to_matrix(set[i].mask).cast<int>();
      s += oracle::s_measure(pred, gt);
      m += oracle::mae(pred, gt);
      e += oracle::e_measure_max(pred, gt);
      if (gt.sum() > 0) {
        f += oracle::f_measure_max(pred, gt);
        ++n_f;
      }
      ++n;
    }
    const auto& got = report.saliency.at(category);
    EXPECT_NEAR(got.s_alpha, s / n, 1e-6);
    EXPECT_NEAR(got.mae, m / n, 1e-6);
    EXPECT_NEAR(got.e_max, e / n, 1e-6);
    EXPECT_NEAR(got.f_max, n_f > 0 ? f / n_f : 0.0, 1e-6);
  }
}

TEST(Detector, PresetsAndCheckpoint) {
  EXPECT_EQ(DetectorConfig::tsernet_like().optimizer, OptimizerKind::adam);
  EXPECT_EQ(DetectorConfig::minet_like().batch_size, 32);
  const auto j = DetectorConfig::minet_like().to_json();
  EXPECT_EQ(DetectorConfig::from_json(j).to_json(), j);
  fixture::TempDir dir("det");
  const auto set = synth_dataset(1, 0, 32);
  const auto params = train_detector(set, quick_config(3), 1);
  save_detector(params, dir.path() / "d.pt");
  const auto loaded = load_detector(dir.path() / "d.pt");
  EXPECT_TRUE(torch::equal(predict_saliency(params, set[0].image), predict_saliency(loaded, set[0].image)));
}
