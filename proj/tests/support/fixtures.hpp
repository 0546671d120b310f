#pragma once

// Small configurations shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/generator.hpp"

namespace deffiller::fixture {

/// 32x32 images, factor-4 latents, 16 layout tokens of width 16.
AutoencoderConfig tiny_autoencoder_config();
GeneratorConfig tiny_generator_config(int resolution = 32);

/// Untrained but frozen autoencoder of the tiny config.
AutoencoderParams frozen_autoencoder(const AutoencoderConfig& config, std::uint64_t seed);

GeneratorState tiny_generator(std::uint64_t seed = 0, int resolution = 32);

/// Every gate set to `value`.
void set_gates(GeneratorState& state, double value);

torch::Tensor to_tensor(const Eigen::MatrixXd& m);
Eigen::MatrixXd to_matrix(const torch::Tensor& t);

/// A scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace deffiller::fixture
