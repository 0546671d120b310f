#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>

#include "deffiller/datasets.hpp"
#include "deffiller/metrics.hpp"

namespace deffiller {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

/// Optimisation settings of a stand-in detector, using the hyperparameter
/// vocabulary of the published detectors.
struct DetectorConfig {
  std::string name = "csepnet-like";
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int batch_size = 4;
  int max_steps = 1000;
  /// Plateau check cadence (steps) and patience (checks).
  int eval_every = 25;
  int patience = 10;
  int base_channels = 16;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& document);

  static DetectorConfig csepnet_like();
  static DetectorConfig tsernet_like();
  static DetectorConfig minet_like();
};

/// Three-level U-shaped saliency network producing one logit per pixel.
class SaliencyNetImpl : public torch::nn::Module {
 public:
  SaliencyNetImpl(int image_channels, int base_channels);
  torch::Tensor forward(const torch::Tensor& images);

 private:
  torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, enc3_{nullptr};
  torch::nn::ConvTranspose2d up2_{nullptr}, up1_{nullptr};
  torch::nn::Sequential dec2_{nullptr}, dec1_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(SaliencyNet);

struct DetectorParams {
  DetectorConfig config;
  SaliencyNet net{nullptr};
  int image_channels = 1;
  int resolution = 0;
  int steps_run = 0;
  std::vector<double> losses;
};

/// Binary cross-entropy training from image to mask with early stop on a
/// plateau of the windowed training loss.
DetectorParams train_detector(const PairSet& train, const DetectorConfig& config, std::uint64_t seed);

/// (C, H, W) image at the training resolution -> (H, W) map in [0, 1].
torch::Tensor predict_saliency(const DetectorParams& params, const torch::Tensor& image);

using SaliencyPredictor = std::function<torch::Tensor(const MaskImagePair&)>;

/// Per-category and aggregate S, M, E_max, F_max over a test set.
metrics::MetricReport evaluate_predictor(const SaliencyPredictor& predictor, const PairSet& test);
metrics::MetricReport evaluate_detector(const DetectorParams& params, const PairSet& test);

void save_detector(const DetectorParams& params, const std::filesystem::path& path);
DetectorParams load_detector(const std::filesystem::path& path);

}  // namespace deffiller
