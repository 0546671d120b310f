#include <cmath>

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"
#include "fixtures.hpp"

using namespace deffiller;

TEST(Autoencoder, LatentShapeAtFactorEight) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  const auto code = encode(params, torch::zeros({1, 64, 64}));
  EXPECT_EQ(code.values.sizes(), (std::vector<std::int64_t>{4, 8, 8}));
  EXPECT_EQ(code.spatial_factor, 8);
}

TEST(Autoencoder, EncodeIsDeterministic) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  const auto image = synth_pair(0, "inclusion", 64).image;
  EXPECT_TRUE(torch::equal(encode(params, image).values, encode(params, image).values));
}

TEST(Autoencoder, RejectsIndivisibleSize) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  EXPECT_THROW(encode(params, torch::zeros({1, 60, 60})), Error);
}

TEST(Autoencoder, RejectsWrongChannelCount) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  EXPECT_THROW(encode(params, torch::zeros({3, 64, 64})), Error);
  EXPECT_THROW(decode(params, torch::zeros({3, 8, 8})), Error);
}

TEST(Autoencoder, ZeroLatentDecodesIntoRange) {
  const auto params = make_autoencoder(AutoencoderConfig{}, 0);
  const auto image = decode(params, torch::zeros({4, 8, 8}));
  EXPECT_EQ(image.sizes(), (std::vector<std::int64_t>{1, 64, 64}));
  EXPECT_GE(image.min().item<float>(), -1.0f);
  EXPECT_LE(image.max().item<float>(), 1.0f);
}

TEST(Autoencoder, RoundTripShapeAndCompression) {
  for (int stages : {1, 2, 3}) {
    AutoencoderConfig config;
    config.downsample_stages = stages;
    const auto params = make_autoencoder(config, 1);
    for (int size : {32, 64}) {
      const auto x = torch::rand({2, 1, size, size}) * 2 - 1;
      const auto z = encode_batch(params, x);
      EXPECT_EQ(decode_batch(params, z).sizes(), x.sizes());
      if (stages > 1) EXPECT_LT(z.numel(), x.numel());
    }
  }
}

TEST(Autoencoder, ZeroStepsKeepsInitialisation) {
  AutoencoderTrainConfig train;
  train.steps = 0;
  const auto set = synth_dataset(2, 0, 32);
  const auto trained = train_autoencoder(set, fixture::tiny_autoencoder_config(), train);
  const auto fresh = make_autoencoder(fixture::tiny_autoencoder_config(), train.seed);
  const auto a = trained.net->parameters();
  const auto b = fresh.net->parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
}

TEST(Autoencoder, EmptySetThrows) {
  EXPECT_THROW(train_autoencoder(PairSet{}, AutoencoderConfig{}, AutoencoderTrainConfig{}), Error);
}

TEST(Autoencoder, OverfitHalvesLossAndReconstructs) {
  const auto set = synth_dataset(6, 0, 64);  // 18 pairs
  AutoencoderTrainConfig train;
  train.steps = 400;
  const auto params = train_autoencoder(set, AutoencoderConfig{}, train);
  EXPECT_LT(params.final_loss, 0.5 * params.initial_loss);
  const auto images = set.images();
  const double mean_abs = (decode_batch(params, encode_batch(params, images)) - images).abs().mean().item<double>();
  EXPECT_LE(mean_abs, 0.05);
  for (const auto& p : params.net->parameters()) EXPECT_FALSE(p.requires_grad());
}

TEST(Autoencoder, SaveLoadRoundTrip) {
  fixture::TempDir dir("ae");
  auto params = make_autoencoder(fixture::tiny_autoencoder_config(), 4);
  params.latent_scale = 0.75;
  save_autoencoder(params, dir.path() / "ae.pt");
  const auto loaded = load_autoencoder(dir.path() / "ae.pt");
  EXPECT_EQ(loaded.latent_scale, 0.75);
  const auto x = torch::rand({1, 1, 32, 32});
  EXPECT_TRUE(torch::equal(encode_batch(params, x), encode_batch(loaded, x)));
}

// Reconstruction-loss gradients against central differences in float64.
TEST(Autoencoder, GradientMatchesFiniteDifferences) {
  AutoencoderConfig config;
  config.base_channels = 4;
  config.feature_channels = 8;
  config.downsample_stages = 1;
  auto params = make_autoencoder(config, 2);
  params.net->to(torch::kFloat64);
  const auto x = (synth_pair(3, "scratches", 16).image.unsqueeze(0)).to(torch::kFloat64);

  auto net = params.net;
  net->zero_grad();
  reconstruction_loss(net, x).backward();

  auto rng = make_generator(11);
  int checked = 0;
  for (auto& p : net->parameters()) {
    const auto flat_index = torch::randint(p.numel(), {3}, rng, torch::kInt64);
    for (int k = 0; k < 3; ++k) {
      const auto i = flat_index[k].item<std::int64_t>();
      const double analytic = p.grad().view(-1)[i].item<double>();
      const double h = 1e-5;
      double plus;
      double minus;
      {
        torch::NoGradGuard no_grad;
        const double original = p.view(-1)[i].item<double>();
        p.view(-1)[i] = original + h;
        plus = reconstruction_loss(net, x).item<double>();
        p.view(-1)[i] = original - h;
        minus = reconstruction_loss(net, x).item<double>();
        p.view(-1)[i] = original;
      }
      const double numeric = (plus - minus) / (2 * h);
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      EXPECT_LE(std::abs(analytic - numeric) / scale, 1e-3) << "parameter element " << i;
      ++checked;
    }
  }
  EXPECT_GE(checked, 20);
}
