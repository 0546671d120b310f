#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/hashing.hpp"
#include "deffiller/image_io.hpp"
#include "fixtures.hpp"

using namespace deffiller;
using namespace deffiller::harness;

namespace {

DetectorConfig quick_detector() {
  auto c = DetectorConfig::csepnet_like();
  c.max_steps = 6;
  c.base_channels = 8;
  return c;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Localize, FindsABrightBlobOnFlatBackground) {
  auto image = torch::zeros({1, 32, 32});
  image.index_put_({0, torch::indexing::Slice(10, 16), torch::indexing::Slice(4, 12)}, 0.9);
  auto expected = torch::zeros({32, 32});
  expected.index_put_({torch::indexing::Slice(10, 16), torch::indexing::Slice(4, 12)}, 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(localize_defect(image), expected), 1.0);
}

TEST(Localize, DropsSmallSpecks) {
  auto image = torch::zeros({1, 32, 32});
  image.index_put_({0, torch::indexing::Slice(0, 10), torch::indexing::Slice(0, 10)}, 1.0);
  image[0][30][30] = 1.0;  // 1 pixel < 20% of 100
  const auto found = localize_defect(image);
  EXPECT_EQ(found.sum().item<float>(), 100.0f);
}

TEST(Iou, EdgeCases) {
  const auto empty = torch::zeros({4, 4});
  EXPECT_EQ(mask_iou(empty, empty), 1.0);
  auto a = torch::zeros({4, 4});
  a[0][0] = 1;
  auto b = a.clone();
  b[0][1] = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.5);
  EXPECT_DOUBLE_EQ(nearest_iou(a, torch::stack({b, a})), 1.0);
}

TEST(Grid, RowsEmptyAndByteIdentical) {
  fixture::TempDir dir("grid");
  const auto set = synth_dataset(1, 0, 16);
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> masks;
  for (const auto& p : set) {
    images.push_back(p.image);
    masks.push_back(p.mask);
  }
  emit_grid(images, masks, dir.path() / "a.png");
  emit_grid(images, masks, dir.path() / "b.png");
  ASSERT_TRUE(std::filesystem::exists(dir.path() / "a.png"));
  EXPECT_EQ(slurp(dir.path() / "a.png"), slurp(dir.path() / "b.png"));
  const auto raster = image_io::read_unit(dir.path() / "a.png", 1);
  EXPECT_EQ(raster.size(1), 3 * 16);
  EXPECT_EQ(raster.size(2), 2 * 16);
  EXPECT_THROW(emit_grid({}, {}, dir.path() / "c.png"), Error);
  EXPECT_THROW(emit_grid(images, {masks[0]}, dir.path() / "d.png"), Error);
}

TEST(FidTable, AverageIsCategoryMean) {
  FidTable table;
  table.categories = default_categories();
  table.add_row("3", {10.0, 20.0, 33.0});
  table.add_row("5", {1.0, 2.0, 4.0});
  EXPECT_NEAR(table.rows[0].average, 21.0, 1e-12);
  EXPECT_EQ(table.best_row(), 1u);
  EXPECT_NE(table.to_csv().find("omega,inclusion,patches,scratches,AVG"), std::string::npos);
}

TEST(Quality, CopyOfRealSetGivesZeroFid) {
  const auto extractor = make_autoencoder(fixture::tiny_autoencoder_config(), 0);
  const auto set = synth_dataset(4, 0, 32);
  RealImageOracle oracle;
  const auto table = eval_generation_quality(extractor, set, generate_pairs(oracle, set, 0));
  ASSERT_EQ(table.rows.size(), 1u);
  ASSERT_EQ(table.rows[0].values.size(), 3u);
  for (double v : table.rows[0].values) EXPECT_LE(std::abs(v), 1e-6);
  const auto& r = table.rows[0];
  EXPECT_NEAR(r.average, (r.values[0] + r.values[1] + r.values[2]) / 3.0, 1e-12);
}

TEST(Quality, ExtractorMismatchThrows) {
  metrics::FeatureSet a{Eigen::MatrixXd::Random(4, 3), "x"};
  metrics::FeatureSet b{Eigen::MatrixXd::Random(4, 3), "y"};
  EXPECT_THROW(metrics::fid(a, b), Error);
}

TEST(GuidanceSweep, FourRowsOfThreeCategories) {
  auto state = fixture::tiny_generator(0);
  const auto reference = synth_dataset(2, 0, 32);
  GuidanceConfig g;
  g.sampler_steps = 2;
  const auto table = ablate_guidance_scale(state, reference, {1, 3, 5, 7}, g, 8);
  ASSERT_EQ(table.rows.size(), 4u);
  EXPECT_EQ(table.categories, default_categories());
  for (const auto& row : table.rows) {
    EXPECT_EQ(row.values.size(), 3u);
    EXPECT_NEAR(row.average, (row.values[0] + row.values[1] + row.values[2]) / 3.0, 1e-9);
  }
  EXPECT_EQ(table.rows[1].label, "3");
}

TEST(Substitution, RealOracleReproducesBaselineArm) {
  const auto set = synth_dataset(10, 1, 32);
  RealImageOracle oracle;
  SubstitutionSettings settings;
  settings.detectors = {quick_detector()};
  settings.seeds = {0, 1};
  const auto report = run_substitution(set, oracle, settings);
  ASSERT_EQ(report.rows.size(), 4u);
  for (std::size_t i = 0; i < report.rows.size(); i += 2) {
    EXPECT_EQ(report.rows[i].arm, "None");
    EXPECT_EQ(report.rows[i + 1].arm, "DefFiller");
    EXPECT_EQ(report.rows[i].report.to_csv(), report.rows[i + 1].report.to_csv());
  }
  const auto table = report.to_table();
  for (const char* column : {"S_alpha", "M", "E_max", "F_max"}) EXPECT_NE(table.find(column), std::string::npos);
}

TEST(Expansion, ZeroAddedKeepsArmsEqual) {
  const auto set = synth_dataset(6, 2, 32);
  RealImageOracle oracle;
  ExpansionSettings settings;
  settings.detectors = {quick_detector()};
  settings.added_per_category = 0;
  const MaskSource none = [](int, int, std::uint64_t) { return std::vector<ProducedMask>{}; };
  const auto report = run_expansion(set, oracle, none, settings);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_EQ(report.rows[0].report.to_csv(), report.rows[1].report.to_csv());
  EXPECT_EQ(report.mean_s_alpha_delta("DefFiller"), 0.0);
}

TEST(Expansion, AddsRequestedPairsPerCategory) {
  const auto set = synth_dataset(6, 2, 32);
  RealImageOracle oracle;
  ExpansionSettings settings;
  settings.detectors = {quick_detector()};
  settings.added_per_category = 2;
  const MaskSource source = [](int n, int resolution, std::uint64_t seed) {
    std::vector<ProducedMask> out;
    for (const auto& category : default_categories()) {
      for (int i = 0; i < n; ++i) {
        out.push_back({synth_pair(seed + i, category, resolution).mask, category, seed, i});
      }
    }
    return out;
  };
  const auto report = run_expansion(set, oracle, source, settings);
  EXPECT_EQ(report.added_pairs, 6);
  EXPECT_EQ(report.train_pairs, 3);
}

TEST(Config, StrictJsonRoundTrip) {
  const auto config = desk_config();
  const auto j = config.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);
  EXPECT_EQ(ExperimentConfig::from_json(j).hash(), config.hash());
  auto typo = j;
  typo["sedes"] = {0};
  EXPECT_THROW(ExperimentConfig::from_json(typo), Error);
  auto nested = j;
  nested["generator"]["denoiser"]["head"] = 2;
  EXPECT_THROW(ExperimentConfig::from_json(nested), Error);
}

TEST(Config, ResolvedSeedsAreStageSpecific) {
  auto config = desk_config();
  config.run_seed = 5;
  const auto a = config.resolved();
  EXPECT_NE(a.autoencoder_training.seed, a.generator_training.seed);
  EXPECT_NE(a.generator_training.seed, a.mask_ddpm.seed);
  EXPECT_EQ(a.generator.categories, config.categories);
  config.run_seed = 6;
  EXPECT_NE(config.resolved().generator_training.seed, a.generator_training.seed);
  EXPECT_EQ(desk_config().resolved().to_json(), desk_config().resolved().to_json());
}

TEST(Stages, NamesRoundTrip) {
  for (auto stage : all_stages()) EXPECT_EQ(parse_stage(to_string(stage)), stage);
  EXPECT_THROW(parse_stage("train"), Error);
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.config_hash = "abc";
  m.code_version = code_version();
  m.config = desk_config().to_json();
  m.artifacts.push_back({"dataset", "dataset/manifest.jsonl", sha256_hex(std::string_view("x")), 1.5});
  const auto back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  ASSERT_NE(back.find("dataset/manifest.jsonl"), nullptr);
  EXPECT_EQ(back.find("missing"), nullptr);
}
