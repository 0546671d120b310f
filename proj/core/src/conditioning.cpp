#include "deffiller/conditioning.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/random.hpp"

namespace deffiller {

namespace nn = torch::nn;

torch::Tensor expand_channels(const torch::Tensor& mask, int category_index, int num_classes) {
  require(mask.dim() == 2, "expand_channels expects an (H, W) mask, got {} dims", mask.dim());
  auto indices = torch::full({1}, category_index, torch::kInt64);
  return expand_channels(mask.unsqueeze(0), indices, num_classes)[0];
}

torch::Tensor expand_channels(const torch::Tensor& masks, const torch::Tensor& category_indices, int num_classes) {
  require(masks.dim() == 3, "expand_channels expects (N, H, W) masks, got {} dims", masks.dim());
  require(category_indices.dim() == 1 && category_indices.size(0) == masks.size(0),
          "expand_channels needs one category index per mask");
  require(num_classes >= 2, "num_classes must be at least 2, got {}", num_classes);
  const auto max_index = category_indices.max().item<std::int64_t>();
  const auto min_index = category_indices.min().item<std::int64_t>();
  require(min_index >= 0 && max_index < num_classes - 1,
          "category index {} does not fit {} classes (background takes channel 0)", max_index, num_classes);
  auto binary = masks.to(torch::kInt64);
  require(((binary == 0) | (binary == 1)).all().item<bool>() && torch::equal(binary.to(masks.dtype()), masks),
          "expand_channels expects a binary mask");
  // Per-pixel label: 0 for background, category + 1 inside the mask.
  auto labels = binary * (category_indices.view({-1, 1, 1}) + 1);
  return torch::one_hot(labels, num_classes).permute({0, 3, 1, 2}).to(masks.scalar_type() == torch::kDouble
                                                                          ? torch::kDouble
                                                                          : torch::kFloat32);
}

std::array<int, 4> backbone_strides(int grid_factor) {
  require(grid_factor >= 1 && std::has_single_bit(static_cast<unsigned>(grid_factor)),
          "grid_factor must be a power of two, got {}", grid_factor);
  std::array<int, 4> strides{1, 1, 1, 1};
  const int halvings = std::countr_zero(static_cast<unsigned>(grid_factor));
  for (int h = 0; h < halvings; ++h) strides[static_cast<std::size_t>(h % 4)] *= 2;
  std::sort(strides.begin(), strides.end(), std::greater<>());
  return strides;
}

MaskEncoderImpl::MaskEncoderImpl(const MaskEncoderConfig& config) : config_(config) {
  require(config.resolution % config.grid_factor == 0, "grid_factor {} does not divide resolution {}",
          config.grid_factor, config.resolution);
  stem_ = register_module("stem", nn::Conv2d(nn::Conv2dOptions(config.num_classes, config.stem_channels, 3).padding(1)));
  nn::Sequential backbone;
  const auto strides = backbone_strides(config.grid_factor);
  int in = config.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const int out = config.stage_channels[s];
    backbone->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(strides[s]).padding(1)));
    backbone->push_back(nn::SiLU());
    backbone->push_back(nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
    backbone->push_back(nn::SiLU());
    in = out;
  }
  backbone_ = register_module("backbone", backbone);
  project_ = register_module("project", nn::Conv2d(nn::Conv2dOptions(in, config.token_dim, 1)));
  positions_ = register_parameter("positions", torch::randn({config.num_tokens(), config.token_dim}) * 0.02);
}

torch::Tensor MaskEncoderImpl::forward(const torch::Tensor& one_hot) {
  require(one_hot.dim() == 4 && one_hot.size(1) == config_.num_classes,
          "mask encoder expects (N, {}, H, W) input", config_.num_classes);
  require(one_hot.size(2) % config_.grid_factor == 0 && one_hot.size(3) % config_.grid_factor == 0,
          "mask size {}x{} is not divisible by grid_factor {}", one_hot.size(2), one_hot.size(3), config_.grid_factor);
  const auto tokens_expected = (one_hot.size(2) / config_.grid_factor) * (one_hot.size(3) / config_.grid_factor);
  require(tokens_expected == config_.num_tokens(), "mask of size {}x{} yields {} tokens, encoder is sized for {}",
          one_hot.size(2), one_hot.size(3), tokens_expected, config_.num_tokens());
  auto features = project_->forward(backbone_->forward(torch::silu(stem_->forward(one_hot))));
  return features.flatten(2).transpose(1, 2) + positions_;
}

MaskDownsamplerImpl::MaskDownsamplerImpl(int num_classes, int out_channels, int spatial_factor, int hidden)
    : spatial_factor_(spatial_factor), out_channels_(out_channels) {
  require(spatial_factor >= 1 && std::has_single_bit(static_cast<unsigned>(spatial_factor)),
          "downsampler factor must be a power of two, got {}", spatial_factor);
  nn::Sequential body;
  int in = num_classes;
  const int halvings = std::countr_zero(static_cast<unsigned>(spatial_factor));
  for (int h = 0; h < std::max(halvings, 1); ++h) {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, hidden, 3).stride(h < halvings ? 2 : 1).padding(1)));
    body->push_back(nn::SiLU());
    in = hidden;
  }
  body->push_back(nn::Conv2d(nn::Conv2dOptions(in, out_channels, 3).padding(1)));
  body_ = register_module("body", body);
}

torch::Tensor MaskDownsamplerImpl::forward(const torch::Tensor& one_hot) {
  require(one_hot.dim() == 4, "downsampler expects (N, C, H, W) input");
  require(one_hot.size(2) % spatial_factor_ == 0 && one_hot.size(3) % spatial_factor_ == 0,
          "mask size {}x{} is not divisible by the latent factor {}", one_hot.size(2), one_hot.size(3),
          spatial_factor_);
  return body_->forward(one_hot);
}

std::string prompt_text(std::string_view category) {
  return "a photo of " + std::string(category) + " defect on steel surface";
}

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

torch::Tensor sinusoidal_positions(int count, int dim) {
  auto positions = torch::zeros({count, dim});
  for (int p = 0; p < count; ++p) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      positions[p][i] = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  }
  return positions;
}

}  // namespace

PromptEncoderImpl::PromptEncoderImpl(const std::vector<std::string>& categories, int token_dim, int max_tokens,
                                     std::uint64_t seed)
    : categories_(categories), token_dim_(token_dim), max_tokens_(max_tokens) {
  std::set<std::string> words{"<pad>"};
  for (const auto& category : categories) {
    const auto prompt_words = words_of(prompt_text(category));
    require(static_cast<int>(prompt_words.size()) <= max_tokens, "prompt for '{}' has {} words, limit is {}",
            category, prompt_words.size(), max_tokens);
    words.insert(prompt_words.begin(), prompt_words.end());
  }
  std::int64_t id = 0;
  for (const auto& w : words) vocabulary_[w] = id++;
  auto generator = make_generator(substream_seed(seed, "prompt/table"));
  table_ = register_buffer("table", torch::randn({id, token_dim}, generator, torch::kFloat32));
  positions_ = register_buffer("positions", sinusoidal_positions(max_tokens, token_dim));
}

PromptTokens PromptEncoderImpl::encode(std::string_view category) const {
  require(std::find(categories_.begin(), categories_.end(), category) != categories_.end(),
          "unknown prompt category '{}'", category);
  const auto words = words_of(prompt_text(category));
  std::vector<std::int64_t> ids(static_cast<std::size_t>(max_tokens_), vocabulary_.at("<pad>"));
  for (std::size_t i = 0; i < words.size(); ++i) ids[i] = vocabulary_.at(words[i]);
  auto index = torch::tensor(ids, torch::kInt64);
  return {table_.index_select(0, index) + positions_, std::string(category)};
}

torch::Tensor PromptEncoderImpl::encode_batch(const std::vector<std::string>& categories) const {
  std::vector<torch::Tensor> tokens;
  tokens.reserve(categories.size());
  for (const auto& category : categories) tokens.push_back(encode(category).tokens);
  return torch::stack(tokens);
}

PromptTokens encode_prompt(const PromptEncoder& encoder, std::string_view category) {
  return encoder->encode(category);
}

LayoutTokens encode_mask(MaskEncoder& encoder, const torch::Tensor& mask, int category_index) {
  auto one_hot = expand_channels(mask, category_index, encoder->config().num_classes).unsqueeze(0);
  return {encoder->forward(one_hot)};
}

torch::Tensor downsample_mask(MaskDownsampler& down, const torch::Tensor& mask, int category_index, int num_classes) {
  return down->forward(expand_channels(mask, category_index, num_classes).unsqueeze(0))[0];
}

}  // namespace deffiller
