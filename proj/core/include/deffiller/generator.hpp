#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <nlohmann/json.hpp>
#include <torch/nn/module.h>
#include <torch/nn/pimpl.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/conditioning.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/denoiser.hpp"
#include "deffiller/schedule.hpp"

namespace deffiller {

/// Architecture and diffusion settings of the mask-conditioned generator.
struct GeneratorConfig {
  std::vector<std::string> categories = default_categories();
  int resolution = 64;
  /// Spatial factor of the autoencoder the generator is paired with.
  int latent_factor = 8;
  MaskEncoderConfig mask_encoder;
  DenoiserConfig denoiser;
  int downsampler_hidden = 16;
  int prompt_tokens = 8;
  int schedule_steps = 200;
  ScheduleKind schedule_kind = ScheduleKind::scaled_linear;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  /// Probability of replacing the prompt tokens by the null embedding while
  /// training, which trains the unconditional branch used by guidance.
  double prompt_dropout = 0.1;
  /// Restricts training to the mask encoder, downsampler, gated layers,
  /// input convolution, and null prompt.
  bool freeze_backbone = false;
  std::uint64_t init_seed = 0;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& document);
};

/// Mask encoder, mask downsampler, conditioned U-Net, frozen prompt
/// embeddings and the learned null prompt.
class GeneratorModelImpl : public torch::nn::Module {
 public:
  explicit GeneratorModelImpl(const GeneratorConfig& config);

  /// (N, H, W) masks plus per-sample category indices -> (N, C, H, W).
  torch::Tensor condition_map(const torch::Tensor& masks, const torch::Tensor& category_indices) const;

  /// Predicted noise for network input, prompt and layout tokens. A missing prompt selects the null
  /// embedding; missing layout tokens are an error.
  torch::Tensor predict_noise(const torch::Tensor& z_in, const std::optional<torch::Tensor>& prompt_tokens,
                              const torch::Tensor& layout_tokens, const torch::Tensor& timesteps);

  /// Downsampled mask channels stacked in front of the noisy latent.
  torch::Tensor network_input(const torch::Tensor& one_hot, const torch::Tensor& z_t);

  /// (N, N_txt, d) copies of the null prompt.
  torch::Tensor null_prompt_batch(std::int64_t n) const;

  const GeneratorConfig& config() const { return config_; }

  MaskEncoder mask_encoder{nullptr};
  MaskDownsampler downsampler{nullptr};
  Denoiser unet{nullptr};
  PromptEncoder prompts{nullptr};
  torch::Tensor null_prompt;

 private:
  GeneratorConfig config_;
};
TORCH_MODULE(GeneratorModel);

/// Whether a named generator parameter belongs to the trainable set.
bool is_trainable_parameter(const GeneratorConfig& config, const std::string& name);

struct TrainingRecord {
  std::int64_t steps = 0;
  std::vector<double> losses;
};

/// Autoencoder + conditioned denoiser + schedule; the unit saved to a
/// generator checkpoint.
struct GeneratorState {
  GeneratorConfig config;
  AutoencoderParams autoencoder;
  GeneratorModel model{nullptr};
  NoiseSchedule schedule;
  TrainingRecord record;

  /// name -> trainable, in registration order.
  std::vector<std::pair<std::string, bool>> trainable_manifest() const;
  std::vector<torch::Tensor> trainable_parameters() const;
};

/// Builds a fresh generator around a trained, frozen autoencoder. Gates are
/// zero and requires_grad flags follow the trainable set.
GeneratorState make_generator_state(const GeneratorConfig& config, AutoencoderParams autoencoder);

struct TrainingBatch {
  torch::Tensor latents;  // (N, c_z, h_z, w_z), already scaled
  torch::Tensor one_hot;  // (N, C, H, W)
  torch::Tensor prompts;  // (N, N_txt, d)
};

/// Encodes images through the frozen autoencoder and expands masks/prompts.
TrainingBatch make_training_batch(const GeneratorState& state, const PairSet& pairs,
                                  const std::vector<std::int64_t>& indices);
/// Same, from precomputed scaled latents of every pair.
TrainingBatch make_training_batch(const GeneratorState& state, const PairSet& pairs,
                                  const torch::Tensor& all_latents,
                                  const std::vector<std::int64_t>& indices);

/// The random draws of one training step.
struct NoiseDraw {
  torch::Tensor timesteps;    // (N,) int64 in 1..T
  torch::Tensor eps;          // latent-shaped standard normal
  torch::Tensor drop_prompt;  // (N,) bool
};

NoiseDraw draw_noise(const GeneratorState& state, const TrainingBatch& batch, at::Generator& generator);

/// Batch mean of ||eps_hat - eps||^2 over latent elements.
torch::Tensor denoising_loss(const torch::Tensor& eps_hat, const torch::Tensor& eps);

/// Loss of the training objective for fixed draws (differentiable).
torch::Tensor diffusion_loss(GeneratorState& state, const TrainingBatch& batch, const NoiseDraw& draw);

struct StepResult {
  double loss = 0.0;
};

/// Draws (t, eps, prompt dropout), evaluates the loss, zeroes and fills the
/// .grad() of trainable parameters. Does not update weights.
StepResult training_step(GeneratorState& state, const TrainingBatch& batch, at::Generator& generator);

struct GeneratorTrainConfig {
  int iterations = 30000;
  int warmup_iterations = 10000;
  double learning_rate = 5e-5;
  int batch_size = 2;
  std::uint64_t seed = 0;
  /// Called every `log_every` steps with (step, loss); 0 disables.
  int log_every = 0;
  std::function<void(int, double)> on_log;
};

/// Linear ramp from 0 to the base rate over the warm-up, then constant.
double learning_rate_at(const GeneratorTrainConfig& config, int step);

/// Adam over the trainable set. Appends per-step losses to state.record.
void train_generator(GeneratorState& state, const PairSet& pairs, const GeneratorTrainConfig& config);

struct GuidanceConfig {
  double omega = 3.0;
  std::map<std::string, double> per_category_omega;
  /// Number of denoising steps; 0 means every step of the schedule.
  int sampler_steps = 0;
  std::uint64_t seed = 0;

  double omega_for(const std::string& category) const;
};

/// Guided noise estimate uncond + omega * (cond - uncond), evaluated as
/// (1 - omega) * uncond + omega * cond so omega in {0, 1} is exact.
/// `omega` is a scalar or a per-sample (N,) tensor.
torch::Tensor cfg_predict(GeneratorModel& model, const torch::Tensor& z_t, const torch::Tensor& one_hot,
                          const torch::Tensor& prompt_tokens, const torch::Tensor& timesteps,
                          const torch::Tensor& omega);

/// Guided ancestral sampling from z_T ~ N(0, I) followed by decoding.
/// masks: (N, H, W); returns (N, C, H, W) in [-1, 1].
torch::Tensor sample(GeneratorState& state, const torch::Tensor& masks,
                     const std::vector<std::string>& categories, const GuidanceConfig& guidance);

/// Single-mask convenience, (H, W) -> (C, H, W).
torch::Tensor sample(GeneratorState& state, const torch::Tensor& mask, const std::string& category,
                     const GuidanceConfig& guidance);

void save_generator(const GeneratorState& state, const std::filesystem::path& path);
GeneratorState load_generator(const std::filesystem::path& path);

}  // namespace deffiller
