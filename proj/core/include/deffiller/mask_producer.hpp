#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/embedding.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

#include "deffiller/blocks.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/schedule.hpp"

namespace deffiller {

struct MaskDDPMConfig {
  std::vector<std::string> categories = default_categories();
  /// Square training resolution (64 in the reference setting).
  int resolution = 32;
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 2};
  int time_dim = 128;
  int groups = 8;
  /// One shared model with a class embedding instead of one model per class.
  bool class_conditioned = false;
  int schedule_steps = 200;
  ScheduleKind schedule_kind = ScheduleKind::scaled_linear;
  /// Iteration budget. When `epochs` > 0 it overrides `iterations` with
  /// epochs * ceil(n / batch_size) per model.
  int iterations = 2000;
  int epochs = 0;
  int batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Denoising steps at sampling time; 0 means all.
  int sampler_steps = 0;

  nlohmann::json to_json() const;
  static MaskDDPMConfig from_json(const nlohmann::json& document);
  /// 200 epochs, batch 32, lr 1e-4 at 64x64.
  static MaskDDPMConfig reference();
};

/// Unconditional (optionally class-conditioned) eps-prediction U-Net over
/// single-channel maps in [-1, 1].
class MaskUNetImpl : public torch::nn::Module {
 public:
  MaskUNetImpl(const MaskDDPMConfig& config, int num_classes);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& timesteps,
                        const torch::Tensor& class_indices);

 private:
  MaskDDPMConfig config_;
  torch::nn::Conv2d input_conv_{nullptr};
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Embedding class_embedding_{nullptr};
  torch::nn::ModuleList down_res_{nullptr};
  torch::nn::ModuleList downsamplers_{nullptr};
  ResBlock mid_{nullptr};
  torch::nn::ModuleList up_res_{nullptr};
  torch::nn::ModuleList upsamplers_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(MaskUNet);

struct MaskDDPMParams {
  MaskDDPMConfig config;
  NoiseSchedule schedule;
  /// Keyed by category, or a single "*" entry when class-conditioned.
  std::map<std::string, MaskUNet> models;
  std::map<std::string, std::vector<double>> losses;
};

/// Resamples an (H, W) binary mask to `resolution` x `resolution`. Integer
/// downscaling keeps a cell when any pixel inside it is set, so one-pixel
/// scratches survive; other sizes use nearest neighbour.
torch::Tensor resample_mask(const torch::Tensor& mask, int resolution);

/// Trains one DDPM per category (or a shared class-conditioned one) on the
/// masks of `masks`, resampled to the training resolution and mapped
/// {0,1} -> {-1,+1}.
MaskDDPMParams train_mask_ddpm(const PairSet& masks, const MaskDDPMConfig& config);

struct ProducedMask {
  torch::Tensor mask;  // (H, W) in {0, 1}
  std::string category;
  std::uint64_t seed = 0;
  int index = 0;
};

/// Draws `n_per_category` masks per category, binarizes at 0 (i.e. 0.5 on the
/// unit scale), resizes nearest-neighbour to `target_resolution`, and
/// resamples empty masks. At most 10 * n draws per category are spent before
/// failing with the category name.
std::vector<ProducedMask> produce_masks(MaskDDPMParams& params, int n_per_category, int target_resolution,
                                        std::uint64_t seed);

/// Raw continuous samples in [-1,1] at the training resolution, (n, H, W).
torch::Tensor sample_mask_ddpm(MaskDDPMParams& params, const std::string& category, int n,
                               at::Generator& generator);

/// PNGs under `<root>/<category>/masks/` plus `masks.jsonl`.
void write_produced_masks(const std::vector<ProducedMask>& masks, const std::filesystem::path& root);

void save_mask_ddpm(const MaskDDPMParams& params, const std::filesystem::path& path);
MaskDDPMParams load_mask_ddpm(const std::filesystem::path& path);

}  // namespace deffiller
