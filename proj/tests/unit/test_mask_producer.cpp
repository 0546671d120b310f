#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/mask_producer.hpp"
#include "fixtures.hpp"

using namespace deffiller;

namespace {

MaskDDPMConfig tiny_mask_config() {
  MaskDDPMConfig c;
  c.resolution = 16;
  c.base_channels = 8;
  c.channel_mult = {1, 2};
  c.time_dim = 32;
  c.groups = 4;
  c.schedule_steps = 20;
  c.iterations = 3;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(ResampleMask, DownscalingKeepsSinglePixels) {
  auto mask = torch::zeros({64, 64});
  mask[13][40] = 1;
  const auto small = resample_mask(mask, 32);
  EXPECT_EQ(small.sizes(), (std::vector<std::int64_t>{32, 32}));
  EXPECT_EQ(small.sum().item<float>(), 1.0f);
  EXPECT_EQ(small[6][20].item<float>(), 1.0f);
}

TEST(ResampleMask, OtherSizesUseNearest) {
  auto mask = torch::zeros({16, 16});
  mask.index_put_({torch::indexing::Slice(0, 8)}, 1);
  const auto big = resample_mask(mask, 64);
  EXPECT_EQ(big.sum().item<float>(), 64.0f * 32.0f);
  EXPECT_EQ(resample_mask(torch::ones({30, 30}), 20).sum().item<float>(), 400.0f);
  EXPECT_THROW(resample_mask(torch::ones({1, 4, 4}), 2), Error);
}

TEST(MaskDDPM, EmptyInputThrows) { EXPECT_THROW(train_mask_ddpm(PairSet{}, tiny_mask_config()), Error); }

TEST(MaskDDPM, ReferenceConfigTrainsAtSixtyFour) {
  const auto c = MaskDDPMConfig::reference();
  EXPECT_EQ(c.resolution, 64);
  EXPECT_EQ(c.epochs, 200);
  EXPECT_EQ(c.batch_size, 32);
}

TEST(MaskDDPM, OnePerCategoryOrShared) {
  const auto set = synth_dataset(2, 0, 16);
  auto per_category = train_mask_ddpm(set, tiny_mask_config());
  EXPECT_EQ(per_category.models.size(), 3u);
  auto config = tiny_mask_config();
  config.class_conditioned = true;
  auto shared = train_mask_ddpm(set, config);
  EXPECT_EQ(shared.models.size(), 1u);
  EXPECT_EQ(shared.models.count("*"), 1u);
}

TEST(ProduceMasks, CountsBinaryResolutionNonempty) {
  auto params = train_mask_ddpm(synth_dataset(2, 0, 16), tiny_mask_config());
  EXPECT_TRUE(produce_masks(params, 0, 32, 0).empty());
  const auto masks = produce_masks(params, 4, 32, 1);
  ASSERT_EQ(masks.size(), 12u);
  for (const auto& category : default_categories()) {
    EXPECT_EQ(std::count_if(masks.begin(), masks.end(), [&](const auto& m) { return m.category == category; }), 4);
  }
  for (const auto& m : masks) {
    EXPECT_EQ(m.mask.sizes(), (std::vector<std::int64_t>{32, 32}));
    EXPECT_TRUE(((m.mask == 0) | (m.mask == 1)).all().item<bool>());
    EXPECT_GT(m.mask.sum().item<float>(), 0.0f);
  }
}

TEST(ProduceMasks, DeterministicForFixedSeed) {
  auto params = train_mask_ddpm(synth_dataset(2, 0, 16), tiny_mask_config());
  const auto a = produce_masks(params, 3, 16, 5);
  const auto b = produce_masks(params, 3, 16, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i].mask, b[i].mask));
}

TEST(ProduceMasks, SaveLoadKeepsSamples) {
  fixture::TempDir dir("mask");
  auto params = train_mask_ddpm(synth_dataset(2, 0, 16), tiny_mask_config());
  save_mask_ddpm(params, dir.path() / "m.pt");
  auto loaded = load_mask_ddpm(dir.path() / "m.pt");
  const auto a = produce_masks(params, 2, 16, 3);
  const auto b = produce_masks(loaded, 2, 16, 3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i].mask, b[i].mask));
  write_produced_masks(a, dir.path() / "out");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / "masks.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "out" / "inclusion" / "masks"));
}

TEST(MaskDDPM, OverfitHalvesLoss) {
  auto config = tiny_mask_config();
  config.iterations = 300;
  config.learning_rate = 1e-3;
  config.class_conditioned = true;
  const auto params = train_mask_ddpm(synth_dataset(6, 0, 16), config);
  const auto& losses = params.losses.at("*");
  auto window_mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 30; ++i) s += losses[i];
    return s / 30;
  };
  EXPECT_LT(window_mean(losses.size() - 30), 0.5 * window_mean(0));
}
