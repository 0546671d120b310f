#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

namespace deffiller {

/// One-hot expansion of a binary mask into `num_classes` channels: channel 0
/// is background (1 - mask), channel category_index + 1 is the mask, every
/// other channel is zero. Accepts (H, W) -> (C, H, W) or (N, H, W) with a
/// per-sample index tensor -> (N, C, H, W).
torch::Tensor expand_channels(const torch::Tensor& mask, int category_index, int num_classes);
torch::Tensor expand_channels(const torch::Tensor& masks, const torch::Tensor& category_indices,
                              int num_classes);

struct MaskEncoderConfig {
  int num_classes = 4;
  int stem_channels = 16;
  std::array<int, 4> stage_channels{16, 32, 48, 64};
  /// Total downsampling of the backbone; must be a power of two.
  int grid_factor = 8;
  int token_dim = 64;
  /// Resolution the positional table is sized for.
  int resolution = 64;

  int num_tokens() const { return (resolution / grid_factor) * (resolution / grid_factor); }
};

/// Per-stage strides of the four backbone stages whose product is
/// `grid_factor`; halvings are assigned front-first.
std::array<int, 4> backbone_strides(int grid_factor);

/// Mask -> layout tokens: channel expansion (done by the caller), 3x3 conv
/// stem, four-stage conv backbone, 1x1 projection to the token width, then
/// flatten/permute to (N, tokens, d) plus a learned positional table.
class MaskEncoderImpl : public torch::nn::Module {
 public:
  explicit MaskEncoderImpl(const MaskEncoderConfig& config);
  torch::Tensor forward(const torch::Tensor& one_hot);
  const MaskEncoderConfig& config() const { return config_; }

 private:
  MaskEncoderConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::Sequential backbone_{nullptr};
  torch::nn::Conv2d project_{nullptr};
  torch::Tensor positions_;
};
TORCH_MODULE(MaskEncoder);

struct LayoutTokens {
  torch::Tensor tokens;  // (N, N_tok, d)
};

/// Down network that brings the expanded mask to the latent resolution for
/// concatenation with z_t at the U-Net input.
class MaskDownsamplerImpl : public torch::nn::Module {
 public:
  MaskDownsamplerImpl(int num_classes, int out_channels, int spatial_factor, int hidden = 16);
  torch::Tensor forward(const torch::Tensor& one_hot);
  int spatial_factor() const { return spatial_factor_; }
  int out_channels() const { return out_channels_; }

 private:
  torch::nn::Sequential body_{nullptr};
  int spatial_factor_;
  int out_channels_;
};
TORCH_MODULE(MaskDownsampler);

/// Prompt text used for a category.
std::string prompt_text(std::string_view category);

struct PromptTokens {
  torch::Tensor tokens;  // (N_txt, d)
  std::string category;
};

/// Frozen text embedder: whitespace tokenisation of the category prompt over a
/// fixed vocabulary, a random-normal word table, and sinusoidal positions.
/// Its tables are buffers, so no optimizer ever sees them.
class PromptEncoderImpl : public torch::nn::Module {
 public:
  PromptEncoderImpl(const std::vector<std::string>& categories, int token_dim, int max_tokens,
                    std::uint64_t seed);

  PromptTokens encode(std::string_view category) const;
  /// (N, N_txt, d) for a batch of category names.
  torch::Tensor encode_batch(const std::vector<std::string>& categories) const;

  int token_dim() const { return token_dim_; }
  int max_tokens() const { return max_tokens_; }

 private:
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::int64_t> vocabulary_;
  int token_dim_;
  int max_tokens_;
  torch::Tensor table_;
  torch::Tensor positions_;
};
TORCH_MODULE(PromptEncoder);

/// encode_prompt/encode_mask/downsample_mask: single-sample conveniences.
PromptTokens encode_prompt(const PromptEncoder& encoder, std::string_view category);
LayoutTokens encode_mask(MaskEncoder& encoder, const torch::Tensor& mask, int category_index);
torch::Tensor downsample_mask(MaskDownsampler& down, const torch::Tensor& mask, int category_index,
                              int num_classes);

}  // namespace deffiller
