#include "deffiller/blocks.hpp"

#include <cmath>

#include <torch/torch.h>

#include "deffiller/error.hpp"

namespace deffiller {

namespace nn = torch::nn;

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int dim) {
  require(dim % 2 == 0, "timestep embedding width must be even");
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) / half);
  auto args = timesteps.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int time_dim, int groups) {
  norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(groups, in_channels)));
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  time_proj_ = register_module("time_proj", nn::Linear(time_dim, out_channels));
  norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(groups, out_channels)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  if (in_channels != out_channels) {
    skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_embedding) {
  auto h = conv1_->forward(torch::silu(norm1_->forward(x)));
  h = h + time_proj_->forward(torch::silu(time_embedding)).unsqueeze(-1).unsqueeze(-1);
  h = conv2_->forward(torch::silu(norm2_->forward(h)));
  return (skip_ ? skip_->forward(x) : x) + h;
}

DownsampleImpl::DownsampleImpl(int channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).stride(2).padding(1)));
}

torch::Tensor DownsampleImpl::forward(const torch::Tensor& x) { return conv_->forward(x); }

UpsampleImpl::UpsampleImpl(int channels) {
  conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  auto up = F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  return conv_->forward(up);
}

}  // namespace deffiller
