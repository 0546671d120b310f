#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include "deffiller/checkpoint.hpp"
#include "deffiller/datasets.hpp"

namespace deffiller {

struct AutoencoderConfig {
  int image_channels = 1;
  int latent_channels = 4;
  int base_channels = 16;
  /// Number of stride-2 stages; spatial factor is 2^downsample_stages.
  int downsample_stages = 3;
  /// Width of the last encoder stage, exposed as the FID feature map.
  int feature_channels = 64;

  int spatial_factor() const { return 1 << downsample_stages; }

  nlohmann::json to_json() const;
  static AutoencoderConfig from_json(const nlohmann::json& document);
};

/// Convolutional encoder/decoder pair. The decoder ends in tanh so every
/// output lies in [-1, 1].
class AutoencoderNetImpl : public torch::nn::Module {
 public:
  explicit AutoencoderNetImpl(const AutoencoderConfig& config);

  torch::Tensor encode(const torch::Tensor& images);
  torch::Tensor decode(const torch::Tensor& latents);
  /// Last encoder feature map, (N, feature_channels, H/f, W/f).
  torch::Tensor features(const torch::Tensor& images);

  const AutoencoderConfig& config() const { return config_; }

 private:
  AutoencoderConfig config_;
  torch::nn::Sequential encoder_body_{nullptr};
  torch::nn::Conv2d to_latent_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(AutoencoderNet);

struct LatentCode {
  torch::Tensor values;  // (c_z, h_z, w_z)
  int spatial_factor = 1;
};

struct AutoencoderTrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static AutoencoderTrainConfig from_json(const nlohmann::json& document);
};

struct AutoencoderParams {
  AutoencoderConfig config;
  AutoencoderNet net{nullptr};
  std::int64_t steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;
  /// Multiplier applied to encoder outputs before diffusion so latents have
  /// roughly unit variance; 1 until fitted on training data.
  double latent_scale = 1.0;
};

AutoencoderParams make_autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

/// Encodes one (C, H, W) image. H and W must be divisible by the spatial factor.
LatentCode encode(const AutoencoderParams& params, const torch::Tensor& image);
/// Decodes one (c_z, h_z, w_z) latent to a (C, H, W) image in [-1, 1].
torch::Tensor decode(const AutoencoderParams& params, const torch::Tensor& latent);

/// Batched (N, C, H, W) variants, no grad.
torch::Tensor encode_batch(const AutoencoderParams& params, const torch::Tensor& images);
torch::Tensor decode_batch(const AutoencoderParams& params, const torch::Tensor& latents);

/// MSE reconstruction training with Adam. Returns frozen parameters
/// (requires_grad off) with the loss history and fitted latent scale.
AutoencoderParams train_autoencoder(const PairSet& pairs, const AutoencoderConfig& config,
                                    const AutoencoderTrainConfig& train);

/// Mean-squared reconstruction loss of a batch.
torch::Tensor reconstruction_loss(AutoencoderNet& net, const torch::Tensor& images);

/// Config, training record, and weights share one checkpoint layout that the
/// generator checkpoint embeds.
void write_autoencoder(checkpoint::Writer& writer, const AutoencoderParams& params);
AutoencoderParams read_autoencoder(checkpoint::Reader& reader);

void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path);
AutoencoderParams load_autoencoder(const std::filesystem::path& path);

}  // namespace deffiller
