#include "fixtures.hpp"

#include <atomic>
#include <unistd.h>

namespace deffiller::fixture {

AutoencoderConfig tiny_autoencoder_config() {
  AutoencoderConfig c;
  c.image_channels = 1;
  c.latent_channels = 4;
  c.base_channels = 8;
  c.downsample_stages = 2;
  c.feature_channels = 16;
  return c;
}

GeneratorConfig tiny_generator_config(int resolution) {
  GeneratorConfig c;
  c.resolution = resolution;
  c.latent_factor = 4;
  c.mask_encoder.num_classes = static_cast<int>(c.categories.size()) + 1;
  c.mask_encoder.stem_channels = 8;
  c.mask_encoder.stage_channels = {8, 8, 16, 16};
  c.mask_encoder.grid_factor = 8;
  c.mask_encoder.token_dim = 16;
  c.mask_encoder.resolution = resolution;
  c.denoiser.latent_channels = 4;
  c.denoiser.mask_channels = 4;
  c.denoiser.base_channels = 16;
  c.denoiser.channel_mult = {1, 2};
  c.denoiser.token_dim = 16;
  c.denoiser.heads = 2;
  c.denoiser.time_dim = 32;
  c.denoiser.groups = 4;
  c.downsampler_hidden = 8;
  c.schedule_steps = 50;
  return c;
}

AutoencoderParams frozen_autoencoder(const AutoencoderConfig& config, std::uint64_t seed) {
  auto params = make_autoencoder(config, seed);
  for (auto& p : params.net->parameters()) p.set_requires_grad(false);
  params.net->eval();
  return params;
}

GeneratorState tiny_generator(std::uint64_t seed, int resolution) {
  auto config = tiny_generator_config(resolution);
  config.init_seed = seed;
  return make_generator_state(config, frozen_autoencoder(tiny_autoencoder_config(), seed));
}

void set_gates(GeneratorState& state, double value) {
  torch::NoGradGuard no_grad;
  for (auto& block : state.model->unet->gated_blocks()) block->gamma.fill_(value);
}

torch::Tensor to_tensor(const Eigen::MatrixXd& m) {
  auto t = torch::empty({m.rows(), m.cols()}, torch::kFloat64);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[r][c] = m(r, c);
  }
  return t;
}

Eigen::MatrixXd to_matrix(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(d.size(0), d.size(1));
  auto a = d.accessor<double, 2>();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a[r][c];
  }
  return m;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("deffiller-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace deffiller::fixture
