#pragma once

#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

#include "deffiller/attention.hpp"
#include "deffiller/blocks.hpp"

namespace deffiller {

struct DenoiserConfig {
  int latent_channels = 4;
  /// Downsampled mask channels stacked in front of the latent.
  int mask_channels = 4;
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2};
  int token_dim = 64;
  int heads = 4;
  int time_dim = 128;
  int groups = 8;

  int input_channels() const { return latent_channels + mask_channels; }
};

/// Image feature map <-> token sequence wrapper around a gated attention
/// block: GroupNorm, 1x1 in-projection to the token width, the block, 1x1
/// out-projection, residual.
class SpatialTransformerImpl : public torch::nn::Module {
 public:
  SpatialTransformerImpl(int channels, int width, int heads, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& layout_tokens,
                        const torch::Tensor& prompt_tokens);
  GatedAttentionBlock block{nullptr};

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d proj_in_{nullptr};
  torch::nn::Conv2d proj_out_{nullptr};
};
TORCH_MODULE(SpatialTransformer);

/// Noise-predicting U-Net conditioned on prompt and layout tokens. `input_conv`
/// consumes the downsampled mask channels stacked in front of the noisy latent. Every resolution level and
/// the middle carry a spatial transformer, so each one has its own gate.
class DenoiserImpl : public torch::nn::Module {
 public:
  explicit DenoiserImpl(const DenoiserConfig& config);

  torch::Tensor forward(const torch::Tensor& z_in, const torch::Tensor& timesteps,
                        const torch::Tensor& layout_tokens, const torch::Tensor& prompt_tokens);

  const DenoiserConfig& config() const { return config_; }
  std::vector<GatedAttentionBlock> gated_blocks() const;
  void set_gates_ablated(bool ablated);

  torch::nn::Conv2d input_conv{nullptr};

 private:
  DenoiserConfig config_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::ModuleList down_res_{nullptr};
  torch::nn::ModuleList down_attn_{nullptr};
  torch::nn::ModuleList downsamplers_{nullptr};
  ResBlock mid_res1_{nullptr};
  SpatialTransformer mid_attn_{nullptr};
  ResBlock mid_res2_{nullptr};
  torch::nn::ModuleList up_res_{nullptr};
  torch::nn::ModuleList up_attn_{nullptr};
  torch::nn::ModuleList upsamplers_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(Denoiser);

}  // namespace deffiller
