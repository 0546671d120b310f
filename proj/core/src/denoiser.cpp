#include "deffiller/denoiser.hpp"

#include <torch/torch.h>

#include "deffiller/error.hpp"

namespace deffiller {

namespace nn = torch::nn;

SpatialTransformerImpl::SpatialTransformerImpl(int channels, int width, int heads, int groups) {
  norm_ = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
  proj_in_ = register_module("proj_in", nn::Conv2d(nn::Conv2dOptions(channels, width, 1)));
  block = register_module("block", GatedAttentionBlock(width, heads));
  proj_out_ = register_module("proj_out", nn::Conv2d(nn::Conv2dOptions(width, channels, 1)));
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, const torch::Tensor& layout_tokens,
                                              const torch::Tensor& prompt_tokens) {
  const auto n = x.size(0);
  const auto h = x.size(2);
  const auto w = x.size(3);
  auto tokens = proj_in_->forward(norm_->forward(x)).flatten(2).transpose(1, 2);
  tokens = block->forward(tokens, layout_tokens, prompt_tokens);
  auto map = tokens.transpose(1, 2).reshape({n, tokens.size(2), h, w});
  return x + proj_out_->forward(map);
}

DenoiserImpl::DenoiserImpl(const DenoiserConfig& config) : config_(config) {
  require(!config.channel_mult.empty(), "denoiser needs at least one resolution level");
  require(config.base_channels % 2 == 0, "base_channels must be even for the timestep embedding");
  std::vector<int> widths;
  for (int m : config.channel_mult) widths.push_back(config.base_channels * m);
  for (int w : widths) {
    require(w % config.groups == 0, "channel width {} is not divisible by {} groups", w, config.groups);
  }

  input_conv = register_module(
      "input_conv", nn::Conv2d(nn::Conv2dOptions(config.input_channels(), widths.front(), 3).padding(1)));
  time_mlp_ = register_module("time_mlp", nn::Sequential(nn::Linear(config.base_channels, config.time_dim), nn::SiLU(),
                                                         nn::Linear(config.time_dim, config.time_dim)));

  down_res_ = register_module("down_res", nn::ModuleList());
  down_attn_ = register_module("down_attn", nn::ModuleList());
  downsamplers_ = register_module("downsamplers", nn::ModuleList());
  int channels = widths.front();
  for (std::size_t level = 0; level < widths.size(); ++level) {
    const int out = widths[level];
    down_res_->push_back(ResBlock(channels, out, config.time_dim, config.groups));
    down_attn_->push_back(SpatialTransformer(out, config.token_dim, config.heads, config.groups));
    if (level + 1 < widths.size()) downsamplers_->push_back(Downsample(out));
    channels = out;
  }

  mid_res1_ = register_module("mid_res1", ResBlock(channels, channels, config.time_dim, config.groups));
  mid_attn_ = register_module("mid_attn", SpatialTransformer(channels, config.token_dim, config.heads, config.groups));
  mid_res2_ = register_module("mid_res2", ResBlock(channels, channels, config.time_dim, config.groups));

  up_res_ = register_module("up_res", nn::ModuleList());
  up_attn_ = register_module("up_attn", nn::ModuleList());
  upsamplers_ = register_module("upsamplers", nn::ModuleList());
  for (std::size_t i = widths.size(); i-- > 0;) {
    const int out = widths[i];
    up_res_->push_back(ResBlock(channels + out, out, config.time_dim, config.groups));
    up_attn_->push_back(SpatialTransformer(out, config.token_dim, config.heads, config.groups));
    if (i > 0) upsamplers_->push_back(Upsample(out));
    channels = out;
  }

  out_norm_ = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(config.groups, channels)));
  out_conv_ =
      register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(channels, config.latent_channels, 3).padding(1)));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_in, const torch::Tensor& timesteps,
                                    const torch::Tensor& layout_tokens, const torch::Tensor& prompt_tokens) {
  require(z_in.dim() == 4 && z_in.size(1) == config_.input_channels(), "denoiser expects (N, {}, h, w) input",
          config_.input_channels());
  require(timesteps.dim() == 1 && timesteps.size(0) == z_in.size(0), "denoiser needs one timestep per sample");
  const auto levels = config_.channel_mult.size();
  const auto divisor = std::int64_t{1} << (levels - 1);
  require(z_in.size(2) % divisor == 0 && z_in.size(3) % divisor == 0,
          "latent size {}x{} is not divisible by {}", z_in.size(2), z_in.size(3), divisor);

  auto temb = time_mlp_->forward(timestep_embedding(timesteps, config_.base_channels).to(z_in.scalar_type()));

  auto h = input_conv->forward(z_in);
  std::vector<torch::Tensor> skips;
  for (std::size_t level = 0; level < levels; ++level) {
    h = down_res_[level]->as<ResBlock>()->forward(h, temb);
    h = down_attn_[level]->as<SpatialTransformer>()->forward(h, layout_tokens, prompt_tokens);
    skips.push_back(h);
    if (level + 1 < levels) h = downsamplers_[level]->as<Downsample>()->forward(h);
  }

  h = mid_res1_->forward(h, temb);
  h = mid_attn_->forward(h, layout_tokens, prompt_tokens);
  h = mid_res2_->forward(h, temb);

  for (std::size_t k = 0; k < levels; ++k) {
    const auto level = levels - 1 - k;
    h = torch::cat({h, skips[level]}, 1);
    h = up_res_[k]->as<ResBlock>()->forward(h, temb);
    h = up_attn_[k]->as<SpatialTransformer>()->forward(h, layout_tokens, prompt_tokens);
    if (level > 0) h = upsamplers_[k]->as<Upsample>()->forward(h);
  }
  return out_conv_->forward(torch::silu(out_norm_->forward(h)));
}

std::vector<GatedAttentionBlock> DenoiserImpl::gated_blocks() const {
  std::vector<GatedAttentionBlock> blocks;
  for (const auto& m : *down_attn_) blocks.push_back(m->as<SpatialTransformer>()->block);
  blocks.push_back(mid_attn_->block);
  for (const auto& m : *up_attn_) blocks.push_back(m->as<SpatialTransformer>()->block);
  return blocks;
}

void DenoiserImpl::set_gates_ablated(bool ablated) {
  for (auto& block : gated_blocks()) block->set_gate_ablated(ablated);
}

}  // namespace deffiller
