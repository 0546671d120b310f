#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/conditioning.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"

using namespace deffiller;

TEST(ExpandChannels, EmptyMaskIsAllBackground) {
  const auto map = expand_channels(torch::zeros({8, 8}), 0, 4);
  EXPECT_TRUE(torch::equal(map[0], torch::ones({8, 8})));
  EXPECT_EQ(map.slice(0, 1).sum().item<float>(), 0.0f);
}

TEST(ExpandChannels, SinglePixelLandsInCategoryChannel) {
  auto mask = torch::zeros({8, 8});
  mask[2][5] = 1;
  const auto map = expand_channels(mask, category_index(default_categories(), "scratches"), 4);
  EXPECT_EQ(map[3].sum().item<float>(), 1.0f);
  EXPECT_EQ(map[3][2][5].item<float>(), 1.0f);
  EXPECT_EQ(map[1].sum().item<float>() + map[2].sum().item<float>(), 0.0f);
}

TEST(ExpandChannels, ChannelsSumToOne) {
  auto rng = make_generator(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto mask = (torch::rand({16, 16}, rng) > 0.5).to(torch::kFloat32);
    const auto map = expand_channels(mask, trial % 3, 4);
    EXPECT_TRUE(torch::equal(map.sum(0), torch::ones({16, 16})));
  }
}

TEST(ExpandChannels, RejectsNonBinaryAndBadIndex) {
  EXPECT_THROW(expand_channels(torch::full({4, 4}, 0.5), 0, 4), Error);
  EXPECT_THROW(expand_channels(torch::zeros({4, 4}), 3, 4), Error);
}

TEST(MaskEncoder, TokenCountLaw) {
  const std::vector<std::pair<int, int>> cases{{256, 32}, {64, 8}, {64, 16}, {32, 8}, {128, 32}};
  for (const auto& [resolution, grid] : cases) {
    MaskEncoderConfig config;
    config.resolution = resolution;
    config.grid_factor = grid;
    config.stage_channels = {8, 8, 8, 16};
    config.stem_channels = 8;
    config.token_dim = 16;
    MaskEncoder encoder(config);
    const auto tokens = encode_mask(encoder, torch::zeros({resolution, resolution}), 0).tokens;
    const int side = resolution / grid;
    EXPECT_EQ(tokens.size(1), side * side) << resolution << "/" << grid;
    EXPECT_EQ(tokens.size(2), 16);
  }
}

TEST(MaskEncoder, PaperScaleGridGivesSixtyFourTokens) {
  MaskEncoderConfig config;
  config.resolution = 256;
  config.grid_factor = 32;
  EXPECT_EQ(config.num_tokens(), 64);
}

TEST(MaskEncoder, RepeatIsIdentical) {
  MaskEncoder encoder(MaskEncoderConfig{});
  const auto mask = synth_pair(0, "patches", 64).mask;
  EXPECT_TRUE(torch::equal(encode_mask(encoder, mask, 1).tokens, encode_mask(encoder, mask, 1).tokens));
}

TEST(MaskEncoder, RejectsWrongSize) {
  MaskEncoder encoder(MaskEncoderConfig{});
  EXPECT_THROW(encode_mask(encoder, torch::zeros({32, 32}), 0), Error);
}

TEST(BackboneStrides, ProductIsGridFactor) {
  for (int grid : {1, 2, 4, 8, 16, 32, 64}) {
    const auto strides = backbone_strides(grid);
    EXPECT_EQ(strides[0] * strides[1] * strides[2] * strides[3], grid);
  }
  EXPECT_THROW(backbone_strides(6), Error);
}

TEST(PromptEncoder, FrozenAndDistinct) {
  PromptEncoder prompts(default_categories(), 16, 8, 0);
  const auto a = encode_prompt(prompts, "inclusion").tokens;
  EXPECT_TRUE(torch::equal(a, encode_prompt(prompts, "inclusion").tokens));
  EXPECT_FALSE(torch::equal(a, encode_prompt(prompts, "patches").tokens));
  EXPECT_TRUE(prompts->parameters().empty());
  EXPECT_THROW(encode_prompt(prompts, "rust"), Error);
}

TEST(Downsampler, ReachesLatentGrid) {
  MaskDownsampler down(4, 4, 8, 16);
  const auto mask = synth_pair(1, "inclusion", 64).mask;
  const auto map = downsample_mask(down, mask, 0, 4);
  EXPECT_EQ(map.sizes(), (std::vector<std::int64_t>{4, 8, 8}));
  EXPECT_TRUE(torch::equal(map, downsample_mask(down, mask, 0, 4)));
  EXPECT_THROW(downsample_mask(down, torch::zeros({63, 63}), 0, 4), Error);
}

TEST(PromptText, NamesTheCategory) {
  EXPECT_EQ(prompt_text("scratches"), "a photo of scratches defect on steel surface");
}
