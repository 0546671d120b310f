#include "deffiller/detector.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include <torch/torch.h>

#include "deffiller/checkpoint.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"
#include "json_util.hpp"

namespace deffiller {

namespace nn = torch::nn;

namespace {

constexpr double kPlateauTolerance = 1e-3;

nn::Sequential conv_block(int in, int out, int stride) {
  const int groups = std::min(8, out);
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(groups, out)), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(groups, out)), nn::ReLU());
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  fail("unknown optimizer '{}'", text);
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"name", name},
          {"learning_rate", learning_rate},
          {"optimizer", std::string(to_string(optimizer))},
          {"weight_decay", weight_decay},
          {"momentum", momentum},
          {"batch_size", batch_size},
          {"max_steps", max_steps},
          {"eval_every", eval_every},
          {"patience", patience},
          {"base_channels", base_channels}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"name", "learning_rate", "optimizer", "weight_decay", "momentum", "batch_size",
                            "max_steps", "eval_every", "patience", "base_channels"},
                        "detector config");
  DetectorConfig c;
  json_util::read(j, "name", c.name);
  json_util::read(j, "learning_rate", c.learning_rate);
  if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  json_util::read(j, "weight_decay", c.weight_decay);
  json_util::read(j, "momentum", c.momentum);
  json_util::read(j, "batch_size", c.batch_size);
  json_util::read(j, "max_steps", c.max_steps);
  json_util::read(j, "eval_every", c.eval_every);
  json_util::read(j, "patience", c.patience);
  json_util::read(j, "base_channels", c.base_channels);
  return c;
}

DetectorConfig DetectorConfig::csepnet_like() { return {}; }

DetectorConfig DetectorConfig::tsernet_like() {
  DetectorConfig c;
  c.name = "tsernet-like";
  c.optimizer = OptimizerKind::adam;
  c.learning_rate = 1e-3;
  c.weight_decay = 0.0;
  c.momentum = 0.0;
  c.batch_size = 4;
  return c;
}

DetectorConfig DetectorConfig::minet_like() {
  DetectorConfig c;
  c.name = "minet-like";
  c.optimizer = OptimizerKind::adam;
  c.learning_rate = 4e-3;
  c.weight_decay = 5e-4;
  c.momentum = 0.0;
  c.batch_size = 32;
  return c;
}

SaliencyNetImpl::SaliencyNetImpl(int image_channels, int base) {
  enc1_ = register_module("enc1", conv_block(image_channels, base, 1));
  enc2_ = register_module("enc2", conv_block(base, 2 * base, 2));
  enc3_ = register_module("enc3", conv_block(2 * base, 4 * base, 2));
  up2_ = register_module("up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(4 * base, 2 * base, 2).stride(2)));
  dec2_ = register_module("dec2", conv_block(4 * base, 2 * base, 1));
  up1_ = register_module("up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(2 * base, base, 2).stride(2)));
  dec1_ = register_module("dec1", conv_block(2 * base, base, 1));
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(base, 1, 1)));
}

torch::Tensor SaliencyNetImpl::forward(const torch::Tensor& images) {
  auto e1 = enc1_->forward(images);
  auto e2 = enc2_->forward(e1);
  auto e3 = enc3_->forward(e2);
  auto d2 = dec2_->forward(torch::cat({up2_->forward(e3), e2}, 1));
  auto d1 = dec1_->forward(torch::cat({up1_->forward(d2), e1}, 1));
  return head_->forward(d1);
}

DetectorParams train_detector(const PairSet& train, const DetectorConfig& config, std::uint64_t seed) {
  require(!train.empty(), "cannot train a detector on an empty pair set");
  require(config.batch_size > 0 && config.max_steps >= 0 && config.eval_every > 0 && config.patience > 0,
          "invalid detector training settings");
  require(train.resolution() % 4 == 0, "detector resolution {} is not divisible by 4", train.resolution());
  DetectorParams params;
  params.config = config;
  params.image_channels = train[0].channels();
  params.resolution = train.resolution();
  seed_parameter_init(substream_seed(seed, "detector/init/" + config.name));
  params.net = SaliencyNet(params.image_channels, config.base_channels);

  std::unique_ptr<torch::optim::Optimizer> optimizer;
  if (config.optimizer == OptimizerKind::sgd) {
    optimizer = std::make_unique<torch::optim::SGD>(
        params.net->parameters(),
        torch::optim::SGDOptions(config.learning_rate).momentum(config.momentum).weight_decay(config.weight_decay));
  } else {
    optimizer = std::make_unique<torch::optim::Adam>(
        params.net->parameters(), torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
  }

  const auto images = train.images();
  const auto masks = train.masks().unsqueeze(1);
  const auto n = images.size(0);
  auto rng = make_generator(substream_seed(seed, "detector/batches/" + config.name));
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  params.net->train();
  for (int step = 0; step < config.max_steps; ++step) {
    auto idx = torch::randint(n, {std::min<std::int64_t>(config.batch_size, n)}, rng, torch::kInt64);
    optimizer->zero_grad();
    auto loss = torch::binary_cross_entropy_with_logits(params.net->forward(images.index_select(0, idx)),
                                                        masks.index_select(0, idx));
    loss.backward();
    optimizer->step();
    params.losses.push_back(loss.item<double>());
    params.steps_run = step + 1;
    if (params.steps_run % config.eval_every == 0) {
      const auto window = params.losses.end() - config.eval_every;
      const double mean = std::accumulate(window, params.losses.end(), 0.0) / config.eval_every;
      if (mean < best * (1.0 - kPlateauTolerance)) {
        best = mean;
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  params.net->eval();
  for (auto& p : params.net->parameters()) p.set_requires_grad(false);
  return params;
}

namespace {

torch::Tensor predict_batch(const DetectorParams& params, const torch::Tensor& images) {
  require(images.dim() == 4 && images.size(1) == params.image_channels && images.size(2) == params.resolution &&
              images.size(3) == params.resolution,
          "detector expects ({}, {}, {}) images", params.image_channels, params.resolution, params.resolution);
  torch::NoGradGuard no_grad;
  auto net = params.net;
  return torch::sigmoid(net->forward(images)).squeeze(1);
}

metrics::MetricReport evaluate_maps(const PairSet& test, const std::function<torch::Tensor(std::size_t)>& map_of) {
  require(!test.empty(), "cannot evaluate on an empty test set");
  std::map<std::string, metrics::SaliencyAccumulator> per_category;
  metrics::SaliencyAccumulator overall;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& pair = test[i];
    auto prediction = map_of(i).to(torch::kFloat32).contiguous();
    require(prediction.sizes() == pair.mask.sizes(), "prediction for '{}' has the wrong shape", pair.id);
    auto gt = pair.mask.to(torch::kFloat32).contiguous();
    const metrics::SaliencyEval eval(std::span<const float>(prediction.data_ptr<float>(), prediction.numel()),
                                     std::span<const float>(gt.data_ptr<float>(), gt.numel()), pair.height(),
                                     pair.width());
    per_category[pair.category].add(eval);
    overall.add(eval);
  }
  metrics::MetricReport report;
  for (const auto& [category, acc] : per_category) report.saliency[category] = acc.scores();
  report.saliency["all"] = overall.scores();
  return report;
}

}  // namespace

torch::Tensor predict_saliency(const DetectorParams& params, const torch::Tensor& image) {
  require(image.dim() == 3, "predict_saliency expects a (C, H, W) image");
  return predict_batch(params, image.unsqueeze(0))[0];
}

metrics::MetricReport evaluate_predictor(const SaliencyPredictor& predictor, const PairSet& test) {
  return evaluate_maps(test, [&](std::size_t i) { return predictor(test[i]); });
}

metrics::MetricReport evaluate_detector(const DetectorParams& params, const PairSet& test) {
  require(!test.empty(), "cannot evaluate on an empty test set");
  const auto maps = predict_batch(params, test.images());
  return evaluate_maps(test, [&](std::size_t i) { return maps[static_cast<std::int64_t>(i)]; });
}

void save_detector(const DetectorParams& params, const std::filesystem::path& path) {
  checkpoint::Writer writer("detector");
  writer.add_json("config", {{"detector", params.config.to_json()},
                             {"image_channels", params.image_channels},
                             {"resolution", params.resolution}});
  writer.add_json("training", {{"steps_run", params.steps_run}, {"losses", params.losses}});
  writer.add_module("detector", *params.net);
  writer.save(path);
}

DetectorParams load_detector(const std::filesystem::path& path) {
  checkpoint::Reader reader(path, "detector");
  const auto config = reader.json("config");
  DetectorParams params;
  params.config = DetectorConfig::from_json(config.at("detector"));
  params.image_channels = config.at("image_channels").get<int>();
  params.resolution = config.at("resolution").get<int>();
  params.net = SaliencyNet(params.image_channels, params.config.base_channels);
  reader.load_module("detector", *params.net);
  params.net->eval();
  for (auto& p : params.net->parameters()) p.set_requires_grad(false);
  const auto training = reader.json("training");
  params.steps_run = training.at("steps_run").get<int>();
  params.losses = training.at("losses").get<std::vector<double>>();
  return params;
}

}  // namespace deffiller
