#include "deffiller/autoencoder.hpp"

#include <algorithm>

#include <torch/torch.h>

#include "deffiller/checkpoint.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"
#include "json_util.hpp"

namespace deffiller {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

std::vector<int> stage_channels(const AutoencoderConfig& config) {
  std::vector<int> channels;
  for (int s = 0; s < config.downsample_stages; ++s) {
    channels.push_back(s + 1 == config.downsample_stages ? config.feature_channels
                                                         : std::min(config.base_channels << (s + 1), config.feature_channels));
  }
  return channels;
}

void check_image_batch(const AutoencoderConfig& config, const torch::Tensor& images) {
  require(images.dim() == 4, "autoencoder expects (N, C, H, W) images, got {} dims", images.dim());
  require(images.size(1) == config.image_channels, "autoencoder expects {} image channels, got {}",
          config.image_channels, images.size(1));
  const int f = config.spatial_factor();
  require(images.size(2) % f == 0 && images.size(3) % f == 0,
          "image size {}x{} is not divisible by the spatial factor {}", images.size(2), images.size(3), f);
}

void check_latent_batch(const AutoencoderConfig& config, const torch::Tensor& latents) {
  require(latents.dim() == 4, "decoder expects (N, c_z, h, w) latents, got {} dims", latents.dim());
  require(latents.size(1) == config.latent_channels, "decoder expects {} latent channels, got {}",
          config.latent_channels, latents.size(1));
}

}  // namespace

nlohmann::json AutoencoderConfig::to_json() const {
  return {{"image_channels", image_channels},
          {"latent_channels", latent_channels},
          {"base_channels", base_channels},
          {"downsample_stages", downsample_stages},
          {"feature_channels", feature_channels}};
}

AutoencoderConfig AutoencoderConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"image_channels", "latent_channels", "base_channels", "downsample_stages", "feature_channels"},
                        "autoencoder config");
  AutoencoderConfig c;
  json_util::read(j, "image_channels", c.image_channels);
  json_util::read(j, "latent_channels", c.latent_channels);
  json_util::read(j, "base_channels", c.base_channels);
  json_util::read(j, "downsample_stages", c.downsample_stages);
  json_util::read(j, "feature_channels", c.feature_channels);
  return c;
}

nlohmann::json AutoencoderTrainConfig::to_json() const {
  return {{"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate}, {"seed", seed}};
}

AutoencoderTrainConfig AutoencoderTrainConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"steps", "batch_size", "learning_rate", "seed"}, "autoencoder training config");
  AutoencoderTrainConfig c;
  json_util::read(j, "steps", c.steps);
  json_util::read(j, "batch_size", c.batch_size);
  json_util::read(j, "learning_rate", c.learning_rate);
  json_util::read(j, "seed", c.seed);
  return c;
}

AutoencoderNetImpl::AutoencoderNetImpl(const AutoencoderConfig& config) : config_(config) {
  require(config.downsample_stages >= 1, "autoencoder needs at least one downsampling stage");
  require(config.latent_channels >= 1 && config.image_channels >= 1, "channel counts must be positive");
  const auto channels = stage_channels(config);

  nn::Sequential encoder;
  encoder->push_back(conv3(config.image_channels, config.base_channels));
  encoder->push_back(nn::SiLU());
  int in = config.base_channels;
  for (int out : channels) {
    encoder->push_back(conv3(in, out, 2));
    encoder->push_back(nn::SiLU());
    encoder->push_back(conv3(out, out));
    encoder->push_back(nn::SiLU());
    in = out;
  }
  encoder_body_ = register_module("encoder", encoder);
  to_latent_ = register_module("to_latent", nn::Conv2d(nn::Conv2dOptions(in, config.latent_channels, 1)));

  nn::Sequential decoder;
  decoder->push_back(conv3(config.latent_channels, in));
  decoder->push_back(nn::SiLU());
  for (int s = config.downsample_stages - 1; s >= 0; --s) {
    const int out = s == 0 ? config.base_channels : channels[static_cast<std::size_t>(s - 1)];
    decoder->push_back(nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    decoder->push_back(conv3(in, out));
    decoder->push_back(nn::SiLU());
    decoder->push_back(conv3(out, out));
    decoder->push_back(nn::SiLU());
    in = out;
  }
  decoder->push_back(conv3(in, config.image_channels));
  decoder->push_back(nn::Tanh());
  decoder_ = register_module("decoder", decoder);
}

torch::Tensor AutoencoderNetImpl::features(const torch::Tensor& images) {
  check_image_batch(config_, images);
  return encoder_body_->forward(images);
}

torch::Tensor AutoencoderNetImpl::encode(const torch::Tensor& images) { return to_latent_->forward(features(images)); }

torch::Tensor AutoencoderNetImpl::decode(const torch::Tensor& latents) {
  check_latent_batch(config_, latents);
  return decoder_->forward(latents);
}

AutoencoderParams make_autoencoder(const AutoencoderConfig& config, std::uint64_t seed) {
  seed_parameter_init(substream_seed(seed, "autoencoder/init"));
  AutoencoderParams params;
  params.config = config;
  params.net = AutoencoderNet(config);
  return params;
}

LatentCode encode(const AutoencoderParams& params, const torch::Tensor& image) {
  require(image.dim() == 3, "encode expects a (C, H, W) image");
  return {encode_batch(params, image.unsqueeze(0))[0], params.config.spatial_factor()};
}

torch::Tensor decode(const AutoencoderParams& params, const torch::Tensor& latent) {
  require(latent.dim() == 3, "decode expects a (c_z, h, w) latent");
  return decode_batch(params, latent.unsqueeze(0))[0];
}

torch::Tensor encode_batch(const AutoencoderParams& params, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto net = params.net;
  return net->encode(images);
}

torch::Tensor decode_batch(const AutoencoderParams& params, const torch::Tensor& latents) {
  torch::NoGradGuard no_grad;
  auto net = params.net;
  return net->decode(latents);
}

torch::Tensor reconstruction_loss(AutoencoderNet& net, const torch::Tensor& images) {
  return torch::mse_loss(net->decode(net->encode(images)), images);
}

AutoencoderParams train_autoencoder(const PairSet& pairs, const AutoencoderConfig& config,
                                    const AutoencoderTrainConfig& train) {
  require(!pairs.empty(), "cannot train the autoencoder on an empty pair set");
  require(train.batch_size > 0 && train.steps >= 0, "invalid autoencoder training budget");
  auto params = make_autoencoder(config, train.seed);
  const auto images = pairs.images();
  const auto n = images.size(0);

  auto full_loss = [&] {
    torch::NoGradGuard no_grad;
    return reconstruction_loss(params.net, images).item<double>();
  };

  params.initial_loss = full_loss();
  torch::optim::Adam optimizer(params.net->parameters(), torch::optim::AdamOptions(train.learning_rate));
  auto generator = make_generator(substream_seed(train.seed, "autoencoder/batches"));
  for (int step = 0; step < train.steps; ++step) {
    auto idx = torch::randint(n, {std::min<std::int64_t>(train.batch_size, n)}, generator,
                              torch::TensorOptions().dtype(torch::kInt64));
    optimizer.zero_grad();
    auto loss = reconstruction_loss(params.net, images.index_select(0, idx));
    loss.backward();
    optimizer.step();
    params.loss_history.push_back(loss.item<double>());
  }
  params.steps = train.steps;
  params.final_loss = full_loss();

  for (auto& p : params.net->parameters()) p.set_requires_grad(false);
  params.net->eval();

  const auto latents = encode_batch(params, images);
  const double std = latents.std().item<double>();
  params.latent_scale = std > 1e-6 ? 1.0 / std : 1.0;
  return params;
}

void write_autoencoder(checkpoint::Writer& writer, const AutoencoderParams& params) {
  writer.add_json("autoencoder_config", params.config.to_json());
  writer.add_json("autoencoder_training", {{"steps", params.steps},
                                           {"initial_loss", params.initial_loss},
                                           {"final_loss", params.final_loss},
                                           {"latent_scale", params.latent_scale},
                                           {"loss_history", params.loss_history}});
  writer.add_module("autoencoder", *params.net);
}

AutoencoderParams read_autoencoder(checkpoint::Reader& reader) {
  AutoencoderParams params;
  params.config = AutoencoderConfig::from_json(reader.json("autoencoder_config"));
  params.net = AutoencoderNet(params.config);
  reader.load_module("autoencoder", *params.net);
  const auto training = reader.json("autoencoder_training");
  params.steps = training.at("steps").get<std::int64_t>();
  params.initial_loss = training.at("initial_loss").get<double>();
  params.final_loss = training.at("final_loss").get<double>();
  params.latent_scale = training.at("latent_scale").get<double>();
  params.loss_history = training.at("loss_history").get<std::vector<double>>();
  for (auto& p : params.net->parameters()) p.set_requires_grad(false);
  params.net->eval();
  return params;
}

void save_autoencoder(const AutoencoderParams& params, const std::filesystem::path& path) {
  checkpoint::Writer writer("autoencoder");
  writer.add_json("config", params.config.to_json());
  write_autoencoder(writer, params);
  writer.save(path);
}

AutoencoderParams load_autoencoder(const std::filesystem::path& path) {
  checkpoint::Reader reader(path, "autoencoder");
  return read_autoencoder(reader);
}

}  // namespace deffiller
