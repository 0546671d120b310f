#include "deffiller/mask_producer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <torch/torch.h>

#include "deffiller/checkpoint.hpp"
#include "deffiller/error.hpp"
#include "deffiller/image_io.hpp"
#include "deffiller/random.hpp"
#include "json_util.hpp"

namespace deffiller {

namespace nn = torch::nn;

namespace {

constexpr const char* kSharedKey = "*";
constexpr int kResampleFactor = 10;
constexpr std::int64_t kSampleChunk = 64;

std::vector<std::string> model_keys(const MaskDDPMConfig& config) {
  if (config.class_conditioned) return {kSharedKey};
  return config.categories;
}

}  // namespace

nlohmann::json MaskDDPMConfig::to_json() const {
  return {{"categories", categories},
          {"resolution", resolution},
          {"base_channels", base_channels},
          {"channel_mult", channel_mult},
          {"time_dim", time_dim},
          {"groups", groups},
          {"class_conditioned", class_conditioned},
          {"schedule_steps", schedule_steps},
          {"schedule_kind", std::string(to_string(schedule_kind))},
          {"iterations", iterations},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"sampler_steps", sampler_steps}};
}

MaskDDPMConfig MaskDDPMConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"categories", "resolution", "base_channels", "channel_mult", "time_dim", "groups",
                            "class_conditioned", "schedule_steps", "schedule_kind", "iterations", "epochs",
                            "batch_size", "learning_rate", "seed", "sampler_steps"},
                        "mask DDPM config");
  MaskDDPMConfig c;
  json_util::read(j, "categories", c.categories);
  json_util::read(j, "resolution", c.resolution);
  json_util::read(j, "base_channels", c.base_channels);
  json_util::read(j, "channel_mult", c.channel_mult);
  json_util::read(j, "time_dim", c.time_dim);
  json_util::read(j, "groups", c.groups);
  json_util::read(j, "class_conditioned", c.class_conditioned);
  json_util::read(j, "schedule_steps", c.schedule_steps);
  if (j.contains("schedule_kind")) c.schedule_kind = parse_schedule_kind(j.at("schedule_kind").get<std::string>());
  json_util::read(j, "iterations", c.iterations);
  json_util::read(j, "epochs", c.epochs);
  json_util::read(j, "batch_size", c.batch_size);
  json_util::read(j, "learning_rate", c.learning_rate);
  json_util::read(j, "seed", c.seed);
  json_util::read(j, "sampler_steps", c.sampler_steps);
  return c;
}

MaskDDPMConfig MaskDDPMConfig::reference() {
  MaskDDPMConfig c;
  c.resolution = 64;
  c.epochs = 200;
  c.batch_size = 32;
  c.learning_rate = 1e-4;
  c.schedule_steps = 1000;
  c.schedule_kind = ScheduleKind::linear;
  return c;
}

MaskUNetImpl::MaskUNetImpl(const MaskDDPMConfig& config, int num_classes) : config_(config) {
  require(!config.channel_mult.empty(), "mask U-Net needs at least one level");
  const int levels = static_cast<int>(config.channel_mult.size());
  require(config.resolution % (1 << (levels - 1)) == 0, "resolution {} is not divisible by {}", config.resolution,
          1 << (levels - 1));
  std::vector<int> widths;
  for (int m : config.channel_mult) widths.push_back(config.base_channels * m);

  input_conv_ = register_module("input_conv", nn::Conv2d(nn::Conv2dOptions(1, widths.front(), 3).padding(1)));
  time_mlp_ = register_module("time_mlp", nn::Sequential(nn::Linear(config.base_channels, config.time_dim), nn::SiLU(),
                                                         nn::Linear(config.time_dim, config.time_dim)));
  if (config.class_conditioned) {
    class_embedding_ = register_module("class_embedding", nn::Embedding(num_classes, config.time_dim));
  }
  down_res_ = register_module("down_res", nn::ModuleList());
  downsamplers_ = register_module("downsamplers", nn::ModuleList());
  int channels = widths.front();
  for (int level = 0; level < levels; ++level) {
    const int out = widths[static_cast<std::size_t>(level)];
    down_res_->push_back(ResBlock(channels, out, config.time_dim, config.groups));
    if (level + 1 < levels) downsamplers_->push_back(Downsample(out));
    channels = out;
  }
  mid_ = register_module("mid", ResBlock(channels, channels, config.time_dim, config.groups));
  up_res_ = register_module("up_res", nn::ModuleList());
  upsamplers_ = register_module("upsamplers", nn::ModuleList());
  for (int level = levels - 1; level >= 0; --level) {
    const int out = widths[static_cast<std::size_t>(level)];
    up_res_->push_back(ResBlock(channels + out, out, config.time_dim, config.groups));
    if (level > 0) upsamplers_->push_back(Upsample(out));
    channels = out;
  }
  out_norm_ = register_module("out_norm", nn::GroupNorm(nn::GroupNormOptions(config.groups, channels)));
  out_conv_ = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(channels, 1, 3).padding(1)));
}

torch::Tensor MaskUNetImpl::forward(const torch::Tensor& x, const torch::Tensor& timesteps,
                                    const torch::Tensor& class_indices) {
  require(x.dim() == 4 && x.size(1) == 1, "mask U-Net expects (N, 1, H, W) input");
  auto temb = time_mlp_->forward(timestep_embedding(timesteps, config_.base_channels).to(x.scalar_type()));
  if (class_embedding_) {
    require(class_indices.defined(), "class-conditioned mask U-Net needs class indices");
    temb = temb + class_embedding_->forward(class_indices);
  }
  const auto levels = config_.channel_mult.size();
  auto h = input_conv_->forward(x);
  std::vector<torch::Tensor> skips;
  for (std::size_t level = 0; level < levels; ++level) {
    h = down_res_[level]->as<ResBlock>()->forward(h, temb);
    skips.push_back(h);
    if (level + 1 < levels) h = downsamplers_[level]->as<Downsample>()->forward(h);
  }
  h = mid_->forward(h, temb);
  for (std::size_t k = 0; k < levels; ++k) {
    const auto level = levels - 1 - k;
    h = up_res_[k]->as<ResBlock>()->forward(torch::cat({h, skips[level]}, 1), temb);
    if (level > 0) h = upsamplers_[k]->as<Upsample>()->forward(h);
  }
  return out_conv_->forward(torch::silu(out_norm_->forward(h)));
}

torch::Tensor resample_mask(const torch::Tensor& mask, int resolution) {
  require(mask.dim() == 2, "resample_mask expects an (H, W) mask, got {} dims", mask.dim());
  require(resolution > 0, "resolution must be positive, got {}", resolution);
  const auto h = mask.size(0);
  const auto w = mask.size(1);
  if (h > resolution && h == w && h % resolution == 0) {
    const auto k = h / resolution;
    return torch::max_pool2d(mask.unsqueeze(0).unsqueeze(0).to(torch::kFloat32), {k, k})[0][0];
  }
  return image_io::resize_nearest(mask, resolution, resolution);
}

namespace {

/// Masks of `set` at the training resolution, mapped to {-1, +1}, (N, 1, R, R).
torch::Tensor training_maps(const PairSet& set, int resolution) {
  std::vector<torch::Tensor> maps;
  for (const auto& pair : set) maps.push_back(resample_mask(pair.mask, resolution));
  return (torch::stack(maps) * 2.0 - 1.0).unsqueeze(1).to(torch::kFloat32);
}

std::vector<double> train_one(MaskUNet& model, const NoiseSchedule& schedule, const torch::Tensor& data,
                              const torch::Tensor& classes, const MaskDDPMConfig& config, std::uint64_t seed) {
  const auto n = data.size(0);
  const int batch = std::min<int>(config.batch_size, static_cast<int>(n));
  const auto per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const auto iterations = config.epochs > 0 ? config.epochs * per_epoch : config.iterations;
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.learning_rate));
  auto rng = make_generator(seed);
  std::vector<double> losses;
  model->train();
  for (std::int64_t step = 0; step < iterations; ++step) {
    auto idx = torch::randint(n, {batch}, rng, torch::kInt64);
    auto x0 = data.index_select(0, idx);
    auto t = torch::randint(1, schedule.steps() + 1, {batch}, rng, torch::kInt64);
    auto eps = torch::randn(x0.sizes(), rng, x0.options());
    auto x_t = q_sample(schedule, x0, t, eps);
    optimizer.zero_grad();
    auto loss = torch::mse_loss(model->forward(x_t, t, classes.defined() ? classes.index_select(0, idx) : classes), eps);
    loss.backward();
    optimizer.step();
    losses.push_back(loss.item<double>());
  }
  model->eval();
  for (auto& p : model->parameters()) p.set_requires_grad(false);
  return losses;
}

/// One reverse step through the posterior q(x_prev | x_t, x0) with the
/// predicted x0 clipped to the data range [-1, 1].
torch::Tensor clipped_posterior_step(const NoiseSchedule& schedule, const torch::Tensor& x_t, int t, int t_prev,
                                     const torch::Tensor& eps_hat, at::Generator& generator) {
  const double ab_t = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar_or_one(t_prev);
  const double beta = 1.0 - ab_t / ab_prev;
  const auto x0 = ((x_t - std::sqrt(1.0 - ab_t) * eps_hat) / std::sqrt(ab_t)).clamp(-1.0, 1.0);
  if (t_prev == 0) return x0;
  const auto mean = (std::sqrt(ab_prev) * beta / (1.0 - ab_t)) * x0 +
                    (std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t)) * x_t;
  const double variance = beta * (1.0 - ab_prev) / (1.0 - ab_t);
  return mean + std::sqrt(variance) * torch::randn(x_t.sizes(), generator, x_t.options());
}

}  // namespace

MaskDDPMParams train_mask_ddpm(const PairSet& masks, const MaskDDPMConfig& config) {
  require(!masks.empty(), "cannot train the mask DDPM on an empty mask set");
  require(config.batch_size > 0, "batch size must be positive");
  MaskDDPMParams params;
  params.config = config;
  params.schedule = make_schedule(config.schedule_steps, config.schedule_kind);
  const int num_classes = static_cast<int>(config.categories.size());

  if (config.class_conditioned) {
    std::vector<std::int64_t> classes;
    for (const auto& pair : masks) classes.push_back(category_index(config.categories, pair.category));
    seed_parameter_init(substream_seed(config.seed, "mask_ddpm/init/*"));
    MaskUNet model(config, num_classes);
    params.losses[kSharedKey] = train_one(model, params.schedule, training_maps(masks, config.resolution),
                                          torch::tensor(classes, torch::kInt64), config,
                                          substream_seed(config.seed, "mask_ddpm/train/*"));
    params.models.emplace(kSharedKey, model);
    return params;
  }

  for (const auto& category : config.categories) {
    const auto subset = masks.of_category(category);
    require(!subset.empty(), "no masks of category '{}' to train the mask DDPM on", category);
    seed_parameter_init(substream_seed(config.seed, "mask_ddpm/init/" + category));
    MaskUNet model(config, num_classes);
    params.losses[category] = train_one(model, params.schedule, training_maps(subset, config.resolution),
                                        torch::Tensor(), config, substream_seed(config.seed, "mask_ddpm/train/" + category));
    params.models.emplace(category, model);
  }
  return params;
}

torch::Tensor sample_mask_ddpm(MaskDDPMParams& params, const std::string& category, int n, at::Generator& generator) {
  torch::NoGradGuard no_grad;
  const auto& config = params.config;
  const int index = category_index(config.categories, category);
  const auto key = config.class_conditioned ? std::string(kSharedKey) : category;
  auto it = params.models.find(key);
  require(it != params.models.end(), "mask DDPM has no model for '{}'", category);
  auto& model = it->second;
  const int total = params.schedule.steps();
  const int steps = config.sampler_steps == 0 ? total : config.sampler_steps;
  require(steps >= 1 && steps <= total, "sampler steps {} outside 1..{}", steps, total);

  auto classes = config.class_conditioned ? torch::full({n}, index, torch::kInt64) : torch::Tensor();
  auto x = torch::randn({n, 1, config.resolution, config.resolution}, generator, torch::kFloat32);
  const auto timesteps = sampling_timesteps(total, steps);
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
    auto eps_hat = model->forward(x, torch::full({n}, t, torch::kInt64), classes);
    x = clipped_posterior_step(params.schedule, x, t, t_prev, eps_hat, generator);
  }
  return x.squeeze(1).clamp(-1.0, 1.0);
}

std::vector<ProducedMask> produce_masks(MaskDDPMParams& params, int n_per_category, int target_resolution,
                                        std::uint64_t seed) {
  require(n_per_category >= 0, "mask count must be nonnegative, got {}", n_per_category);
  require(target_resolution > 0, "target resolution must be positive");
  std::vector<ProducedMask> produced;
  if (n_per_category == 0) return produced;
  for (const auto& category : params.config.categories) {
    auto generator = make_generator(substream_seed(seed, "mask_ddpm/produce/" + category));
    const std::int64_t cap = static_cast<std::int64_t>(kResampleFactor) * n_per_category;
    std::int64_t drawn = 0;
    int kept = 0;
    while (kept < n_per_category) {
      require(drawn < cap, "mask DDPM for '{}' produced only {} nonempty masks in {} draws", category, kept, drawn);
      const auto chunk = std::min({kSampleChunk, static_cast<std::int64_t>(n_per_category - kept), cap - drawn});
      auto raw = sample_mask_ddpm(params, category, static_cast<int>(chunk), generator);
      drawn += chunk;
      for (std::int64_t i = 0; i < chunk && kept < n_per_category; ++i) {
        auto binary = (raw[i] > 0.0).to(torch::kFloat32);
        auto mask = image_io::resize_nearest(binary, target_resolution, target_resolution);
        if (mask.sum().item<double>() == 0.0) continue;
        produced.push_back({mask, category, seed, kept});
        ++kept;
      }
    }
  }
  return produced;
}

void write_produced_masks(const std::vector<ProducedMask>& masks, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::ofstream manifest(root / "masks.jsonl");
  require(static_cast<bool>(manifest), "cannot write mask manifest under {}", root.string());
  for (const auto& m : masks) {
    const auto rel = std::filesystem::path(m.category) / "masks" / fmt::format("{}_gen_{:04d}.png", m.category, m.index);
    image_io::write_mask(root / rel, m.mask);
    manifest << nlohmann::json{{"category", m.category}, {"seed", m.seed}, {"index", m.index}, {"mask", rel.generic_string()}}
                    .dump()
             << '\n';
  }
}

void save_mask_ddpm(const MaskDDPMParams& params, const std::filesystem::path& path) {
  checkpoint::Writer writer("mask_ddpm");
  writer.add_json("config", params.config.to_json());
  writer.add_json("losses", params.losses);
  for (const auto& [key, model] : params.models) writer.add_module("model/" + key, *model);
  writer.save(path);
}

MaskDDPMParams load_mask_ddpm(const std::filesystem::path& path) {
  checkpoint::Reader reader(path, "mask_ddpm");
  MaskDDPMParams params;
  params.config = MaskDDPMConfig::from_json(reader.json("config"));
  params.schedule = make_schedule(params.config.schedule_steps, params.config.schedule_kind);
  params.losses = reader.json("losses").get<std::map<std::string, std::vector<double>>>();
  for (const auto& key : model_keys(params.config)) {
    MaskUNet model(params.config, static_cast<int>(params.config.categories.size()));
    reader.load_module("model/" + key, *model);
    model->eval();
    for (auto& p : model->parameters()) p.set_requires_grad(false);
    params.models.emplace(key, model);
  }
  return params;
}

}  // namespace deffiller
