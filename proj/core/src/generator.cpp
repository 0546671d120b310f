#include "deffiller/generator.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

#include "deffiller/checkpoint.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"
#include "json_util.hpp"

namespace deffiller {

namespace {

nlohmann::json mask_encoder_json(const MaskEncoderConfig& c) {
  return {{"num_classes", c.num_classes},
          {"stem_channels", c.stem_channels},
          {"stage_channels", c.stage_channels},
          {"grid_factor", c.grid_factor},
          {"token_dim", c.token_dim},
          {"resolution", c.resolution}};
}

MaskEncoderConfig mask_encoder_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"num_classes", "stem_channels", "stage_channels", "grid_factor", "token_dim", "resolution"},
                        "mask encoder config");
  MaskEncoderConfig c;
  json_util::read(j, "num_classes", c.num_classes);
  json_util::read(j, "stem_channels", c.stem_channels);
  json_util::read(j, "stage_channels", c.stage_channels);
  json_util::read(j, "grid_factor", c.grid_factor);
  json_util::read(j, "token_dim", c.token_dim);
  json_util::read(j, "resolution", c.resolution);
  return c;
}

nlohmann::json denoiser_json(const DenoiserConfig& c) {
  return {{"latent_channels", c.latent_channels}, {"mask_channels", c.mask_channels},
          {"base_channels", c.base_channels},     {"channel_mult", c.channel_mult},
          {"token_dim", c.token_dim},             {"heads", c.heads},
          {"time_dim", c.time_dim},               {"groups", c.groups}};
}

DenoiserConfig denoiser_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"latent_channels", "mask_channels", "base_channels", "channel_mult", "token_dim", "heads",
                            "time_dim", "groups"},
                        "denoiser config");
  DenoiserConfig c;
  json_util::read(j, "latent_channels", c.latent_channels);
  json_util::read(j, "mask_channels", c.mask_channels);
  json_util::read(j, "base_channels", c.base_channels);
  json_util::read(j, "channel_mult", c.channel_mult);
  json_util::read(j, "token_dim", c.token_dim);
  json_util::read(j, "heads", c.heads);
  json_util::read(j, "time_dim", c.time_dim);
  json_util::read(j, "groups", c.groups);
  return c;
}

void validate(const GeneratorConfig& c) {
  require(!c.categories.empty(), "generator needs at least one category");
  require(c.mask_encoder.num_classes == static_cast<int>(c.categories.size()) + 1,
          "mask encoder has {} classes but {} categories plus background need {}", c.mask_encoder.num_classes,
          c.categories.size(), c.categories.size() + 1);
  require(c.mask_encoder.token_dim == c.denoiser.token_dim, "layout token width {} differs from denoiser width {}",
          c.mask_encoder.token_dim, c.denoiser.token_dim);
  require(c.mask_encoder.resolution == c.resolution, "mask encoder is sized for {} but the generator for {}",
          c.mask_encoder.resolution, c.resolution);
  require(c.latent_factor >= 1 && c.resolution % c.latent_factor == 0,
          "latent factor {} does not divide resolution {}", c.latent_factor, c.resolution);
  require(c.prompt_dropout >= 0.0 && c.prompt_dropout <= 1.0, "prompt dropout must lie in [0, 1]");
}

torch::Tensor category_tensor(const GeneratorConfig& config, const std::vector<std::string>& categories) {
  std::vector<std::int64_t> indices;
  indices.reserve(categories.size());
  for (const auto& category : categories) indices.push_back(category_index(config.categories, category));
  return torch::tensor(indices, torch::kInt64);
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

nlohmann::json GeneratorConfig::to_json() const {
  return {{"categories", categories},
          {"resolution", resolution},
          {"latent_factor", latent_factor},
          {"mask_encoder", mask_encoder_json(mask_encoder)},
          {"denoiser", denoiser_json(denoiser)},
          {"downsampler_hidden", downsampler_hidden},
          {"prompt_tokens", prompt_tokens},
          {"schedule_steps", schedule_steps},
          {"schedule_kind", std::string(to_string(schedule_kind))},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"prompt_dropout", prompt_dropout},
          {"freeze_backbone", freeze_backbone},
          {"init_seed", init_seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"categories", "resolution", "latent_factor", "mask_encoder", "denoiser",
                            "downsampler_hidden", "prompt_tokens", "schedule_steps", "schedule_kind", "beta_start",
                            "beta_end", "prompt_dropout", "freeze_backbone", "init_seed"},
                        "generator config");
  GeneratorConfig c;
  json_util::read(j, "categories", c.categories);
  json_util::read(j, "resolution", c.resolution);
  json_util::read(j, "latent_factor", c.latent_factor);
  if (j.contains("mask_encoder")) c.mask_encoder = mask_encoder_from_json(j.at("mask_encoder"));
  if (j.contains("denoiser")) c.denoiser = denoiser_from_json(j.at("denoiser"));
  json_util::read(j, "downsampler_hidden", c.downsampler_hidden);
  json_util::read(j, "prompt_tokens", c.prompt_tokens);
  json_util::read(j, "schedule_steps", c.schedule_steps);
  if (j.contains("schedule_kind")) c.schedule_kind = parse_schedule_kind(j.at("schedule_kind").get<std::string>());
  json_util::read(j, "beta_start", c.beta_start);
  json_util::read(j, "beta_end", c.beta_end);
  json_util::read(j, "prompt_dropout", c.prompt_dropout);
  json_util::read(j, "freeze_backbone", c.freeze_backbone);
  json_util::read(j, "init_seed", c.init_seed);
  return c;
}

GeneratorModelImpl::GeneratorModelImpl(const GeneratorConfig& config) : config_(config) {
  validate(config);
  mask_encoder = register_module("mask_encoder", MaskEncoder(config.mask_encoder));
  downsampler = register_module("downsampler",
                                MaskDownsampler(config.mask_encoder.num_classes, config.denoiser.mask_channels,
                                                config.latent_factor, config.downsampler_hidden));
  unet = register_module("unet", Denoiser(config.denoiser));
  prompts = register_module("prompts", PromptEncoder(config.categories, config.denoiser.token_dim,
                                                     config.prompt_tokens, config.init_seed));
  null_prompt =
      register_parameter("null_prompt", torch::randn({config.prompt_tokens, config.denoiser.token_dim}) * 0.02);
}

torch::Tensor GeneratorModelImpl::condition_map(const torch::Tensor& masks, const torch::Tensor& category_indices) const {
  require(masks.dim() == 3 && masks.size(1) == config_.resolution && masks.size(2) == config_.resolution,
          "generator expects (N, {}, {}) masks", config_.resolution, config_.resolution);
  return expand_channels(masks, category_indices, config_.mask_encoder.num_classes);
}

torch::Tensor GeneratorModelImpl::predict_noise(const torch::Tensor& z_in,
                                                const std::optional<torch::Tensor>& prompt_tokens,
                                                const torch::Tensor& layout_tokens, const torch::Tensor& timesteps) {
  require(layout_tokens.defined(), "layout tokens are required: the mask condition is mandatory");
  const auto prompts_in = prompt_tokens.has_value() ? *prompt_tokens : null_prompt_batch(z_in.size(0));
  return unet->forward(z_in, timesteps, layout_tokens, prompts_in);
}

torch::Tensor GeneratorModelImpl::network_input(const torch::Tensor& one_hot, const torch::Tensor& z_t) {
  auto down = downsampler->forward(one_hot);
  require(down.sizes().slice(2) == z_t.sizes().slice(2) && down.size(0) == z_t.size(0),
          "downsampled mask {} does not match latent {}", c10::str(down.sizes()), c10::str(z_t.sizes()));
  return torch::cat({down, z_t}, 1);
}

torch::Tensor GeneratorModelImpl::null_prompt_batch(std::int64_t n) const {
  return null_prompt.unsqueeze(0).expand({n, null_prompt.size(0), null_prompt.size(1)});
}

bool is_trainable_parameter(const GeneratorConfig& config, const std::string& name) {
  if (!config.freeze_backbone) return true;
  return starts_with(name, "mask_encoder.") || starts_with(name, "downsampler.") ||
         starts_with(name, "unet.input_conv.") || name == "null_prompt" ||
         name.find(".gated_") != std::string::npos || name.find(".gate_gamma") != std::string::npos;
}

std::vector<std::pair<std::string, bool>> GeneratorState::trainable_manifest() const {
  std::vector<std::pair<std::string, bool>> manifest;
  for (const auto& item : model->named_parameters()) {
    manifest.emplace_back(item.key(), is_trainable_parameter(config, item.key()));
  }
  return manifest;
}

std::vector<torch::Tensor> GeneratorState::trainable_parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto& item : model->named_parameters()) {
    if (is_trainable_parameter(config, item.key())) params.push_back(item.value());
  }
  return params;
}

GeneratorState make_generator_state(const GeneratorConfig& config, AutoencoderParams autoencoder) {
  require(!autoencoder.net.is_empty(), "generator needs a trained autoencoder");
  require(autoencoder.config.spatial_factor() == config.latent_factor,
          "autoencoder factor {} differs from the configured latent factor {}", autoencoder.config.spatial_factor(),
          config.latent_factor);
  require(autoencoder.config.latent_channels == config.denoiser.latent_channels,
          "autoencoder has {} latent channels, denoiser expects {}", autoencoder.config.latent_channels,
          config.denoiser.latent_channels);
  seed_parameter_init(substream_seed(config.init_seed, "generator/init"));
  GeneratorState state{config, std::move(autoencoder), GeneratorModel(config),
                       make_schedule(config.schedule_steps, config.schedule_kind, config.beta_start, config.beta_end),
                       {}};
  for (auto& item : state.model->named_parameters()) {
    item.value().set_requires_grad(is_trainable_parameter(config, item.key()));
  }
  return state;
}

namespace {

TrainingBatch assemble_batch(const GeneratorState& state, const PairSet& pairs, const torch::Tensor& latents,
                             const std::vector<std::int64_t>& indices) {
  std::vector<torch::Tensor> masks;
  std::vector<std::string> categories;
  for (auto i : indices) {
    require(i >= 0 && static_cast<std::size_t>(i) < pairs.size(), "pair index {} out of range", i);
    masks.push_back(pairs[static_cast<std::size_t>(i)].mask);
    categories.push_back(pairs[static_cast<std::size_t>(i)].category);
  }
  TrainingBatch batch;
  batch.latents = latents;
  batch.one_hot = state.model->condition_map(torch::stack(masks), category_tensor(state.config, categories));
  batch.prompts = state.model->prompts->encode_batch(categories);
  return batch;
}

}  // namespace

TrainingBatch make_training_batch(const GeneratorState& state, const PairSet& pairs,
                                  const std::vector<std::int64_t>& indices) {
  require(!indices.empty(), "training batch is empty");
  std::vector<torch::Tensor> images;
  for (auto i : indices) {
    require(i >= 0 && static_cast<std::size_t>(i) < pairs.size(), "pair index {} out of range", i);
    images.push_back(pairs[static_cast<std::size_t>(i)].image);
  }
  auto latents = encode_batch(state.autoencoder, torch::stack(images)) * state.autoencoder.latent_scale;
  return assemble_batch(state, pairs, latents, indices);
}

TrainingBatch make_training_batch(const GeneratorState& state, const PairSet& pairs, const torch::Tensor& all_latents,
                                  const std::vector<std::int64_t>& indices) {
  require(!indices.empty(), "training batch is empty");
  require(static_cast<std::size_t>(all_latents.size(0)) == pairs.size(),
          "latent cache has {} rows for {} pairs", all_latents.size(0), pairs.size());
  return assemble_batch(state, pairs, all_latents.index_select(0, torch::tensor(indices, torch::kInt64)), indices);
}

NoiseDraw draw_noise(const GeneratorState& state, const TrainingBatch& batch, at::Generator& generator) {
  const auto n = batch.latents.size(0);
  require(n > 0, "training batch is empty");
  NoiseDraw draw;
  draw.timesteps = torch::randint(1, state.schedule.steps() + 1, {n}, generator, torch::kInt64);
  draw.eps = torch::randn(batch.latents.sizes(), generator, batch.latents.options());
  draw.drop_prompt = torch::rand({n}, generator, torch::kFloat64) < state.config.prompt_dropout;
  return draw;
}

torch::Tensor denoising_loss(const torch::Tensor& eps_hat, const torch::Tensor& eps) {
  require(eps_hat.sizes() == eps.sizes(), "predicted noise {} does not match target {}", c10::str(eps_hat.sizes()), c10::str(eps.sizes()));
  // Reduced in float64 so small loss differences survive a float32 network.
  return (eps_hat - eps).pow(2).to(torch::kFloat64).mean();
}

torch::Tensor diffusion_loss(GeneratorState& state, const TrainingBatch& batch, const NoiseDraw& draw) {
  require(batch.latents.size(0) > 0, "training batch is empty");
  auto& model = state.model;
  auto z_t = q_sample(state.schedule, batch.latents, draw.timesteps, draw.eps);
  auto prompts = torch::where(draw.drop_prompt.view({-1, 1, 1}), model->null_prompt_batch(batch.prompts.size(0)),
                              batch.prompts.to(model->null_prompt.scalar_type()));
  auto layout = model->mask_encoder->forward(batch.one_hot);
  auto z_in = model->network_input(batch.one_hot, z_t);
  auto eps_hat = model->predict_noise(z_in, prompts, layout, draw.timesteps);
  return denoising_loss(eps_hat, draw.eps);
}

StepResult training_step(GeneratorState& state, const TrainingBatch& batch, at::Generator& generator) {
  const auto draw = draw_noise(state, batch, generator);
  for (auto& p : state.trainable_parameters()) {
    if (p.grad().defined()) p.grad().zero_();
  }
  auto loss = diffusion_loss(state, batch, draw);
  loss.backward();
  return {loss.item<double>()};
}

double learning_rate_at(const GeneratorTrainConfig& config, int step) {
  if (config.warmup_iterations <= 0) return config.learning_rate;
  const double ramp = static_cast<double>(step + 1) / config.warmup_iterations;
  return config.learning_rate * std::min(1.0, ramp);
}

void train_generator(GeneratorState& state, const PairSet& pairs, const GeneratorTrainConfig& config) {
  require(!pairs.empty(), "cannot train the generator on an empty pair set");
  require(config.batch_size > 0 && config.iterations >= 0, "invalid generator training budget");
  const auto latents = encode_batch(state.autoencoder, pairs.images()) * state.autoencoder.latent_scale;
  const auto n = static_cast<std::int64_t>(pairs.size());
  auto params = state.trainable_parameters();
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(config.learning_rate));
  auto batch_rng = make_generator(substream_seed(config.seed, "generator/batches"));
  auto noise_rng = make_generator(substream_seed(config.seed, "generator/noise"));
  state.model->train();
  for (int step = 0; step < config.iterations; ++step) {
    auto idx = torch::randint(n, {std::min<std::int64_t>(config.batch_size, n)}, batch_rng, torch::kInt64);
    std::vector<std::int64_t> indices(idx.data_ptr<std::int64_t>(), idx.data_ptr<std::int64_t>() + idx.numel());
    const auto batch = make_training_batch(state, pairs, latents, indices);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(learning_rate_at(config, step));
    }
    const auto result = training_step(state, batch, noise_rng);
    optimizer.step();
    state.record.losses.push_back(result.loss);
    ++state.record.steps;
    if (config.log_every > 0 && config.on_log && (step + 1) % config.log_every == 0) config.on_log(step + 1, result.loss);
  }
  state.model->eval();
}

double GuidanceConfig::omega_for(const std::string& category) const {
  auto it = per_category_omega.find(category);
  const double value = it == per_category_omega.end() ? omega : it->second;
  require(value >= 0.0, "guidance scale must be nonnegative, got {}", value);
  return value;
}

torch::Tensor cfg_predict(GeneratorModel& model, const torch::Tensor& z_t, const torch::Tensor& one_hot,
                          const torch::Tensor& prompt_tokens, const torch::Tensor& timesteps,
                          const torch::Tensor& omega) {
  require((omega >= 0).all().item<bool>(), "guidance scale must be nonnegative");
  auto layout = model->mask_encoder->forward(one_hot);
  auto z_in = model->network_input(one_hot, z_t);
  auto eps_cond = model->predict_noise(z_in, prompt_tokens, layout, timesteps);
  auto eps_uncond = model->predict_noise(z_in, std::nullopt, layout, timesteps);
  auto w = omega.to(eps_cond.scalar_type());
  if (w.dim() == 1) w = w.view({-1, 1, 1, 1});
  return (1.0 - w) * eps_uncond + w * eps_cond;
}

torch::Tensor sample(GeneratorState& state, const torch::Tensor& masks, const std::vector<std::string>& categories,
                     const GuidanceConfig& guidance) {
  torch::NoGradGuard no_grad;
  require(masks.dim() == 3 && static_cast<std::size_t>(masks.size(0)) == categories.size(),
          "sample needs (N, H, W) masks and one category per mask");
  const int total = state.schedule.steps();
  const int steps = guidance.sampler_steps == 0 ? total : guidance.sampler_steps;
  require(steps >= 1 && steps <= total, "sampler steps {} outside 1..{}", steps, total);
  const auto n = masks.size(0);
  const int f = state.config.latent_factor;

  auto& model = state.model;
  auto one_hot = model->condition_map(masks, category_tensor(state.config, categories));
  auto prompts = model->prompts->encode_batch(categories);
  std::vector<double> omegas;
  for (const auto& category : categories) omegas.push_back(guidance.omega_for(category));
  auto omega = torch::tensor(omegas, torch::kFloat64);

  auto generator = make_generator(substream_seed(guidance.seed, "generator/sample"));
  auto z = torch::randn({n, state.config.denoiser.latent_channels, masks.size(1) / f, masks.size(2) / f}, generator,
                        torch::kFloat32);
  const auto timesteps = sampling_timesteps(total, steps);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
    auto eps_hat = cfg_predict(model, z, one_hot, prompts, torch::full({n}, t, torch::kInt64), omega);
    z = ancestral_step(state.schedule, z, t, t_prev, eps_hat, generator);
  }
  return decode_batch(state.autoencoder, z / state.autoencoder.latent_scale).clamp(-1.0, 1.0);
}

torch::Tensor sample(GeneratorState& state, const torch::Tensor& mask, const std::string& category,
                     const GuidanceConfig& guidance) {
  require(mask.dim() == 2, "sample expects an (H, W) mask");
  return sample(state, mask.unsqueeze(0), {category}, guidance)[0];
}

void save_generator(const GeneratorState& state, const std::filesystem::path& path) {
  checkpoint::Writer writer("generator");
  writer.add_json("config", state.config.to_json());
  write_autoencoder(writer, state.autoencoder);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, trainable] : state.trainable_manifest()) {
    manifest.push_back({{"name", name}, {"trainable", trainable}});
  }
  writer.add_json("trainable_set", manifest);
  writer.add_json("training", {{"steps", state.record.steps}, {"losses", state.record.losses}});
  writer.add_module("generator", *state.model);
  writer.save(path);
}

GeneratorState load_generator(const std::filesystem::path& path) {
  checkpoint::Reader reader(path, "generator");
  const auto config = GeneratorConfig::from_json(reader.json("config"));
  auto state = make_generator_state(config, read_autoencoder(reader));
  for (const auto& entry : reader.json("trainable_set")) {
    const auto name = entry.at("name").get<std::string>();
    require(is_trainable_parameter(config, name) == entry.at("trainable").get<bool>(),
            "trainable-set manifest disagrees with the config for '{}'", name);
  }
  reader.load_module("generator", *state.model);
  const auto training = reader.json("training");
  state.record.steps = training.at("steps").get<std::int64_t>();
  state.record.losses = training.at("losses").get<std::vector<double>>();
  state.model->eval();
  return state;
}

}  // namespace deffiller
