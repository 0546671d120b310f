#include <fstream>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/hashing.hpp"
#include "deffiller/random.hpp"
#include "json_util.hpp"

#ifndef DEFFILLER_VERSION
#define DEFFILLER_VERSION "unknown"
#endif

namespace deffiller::harness {

namespace {

nlohmann::json split_json(const SplitSpec& s) {
  return {{"train_parts", s.train_parts}, {"test_parts", s.test_parts}, {"seed", s.seed}};
}

SplitSpec split_from_json(const nlohmann::json& j, const char* where) {
  json_util::check_keys(j, {"train_parts", "test_parts", "seed"}, where);
  SplitSpec s;
  json_util::read(j, "train_parts", s.train_parts);
  json_util::read(j, "test_parts", s.test_parts);
  json_util::read(j, "seed", s.seed);
  return s;
}

nlohmann::json generator_training_json(const GeneratorTrainConfig& c) {
  return {{"iterations", c.iterations},
          {"warmup_iterations", c.warmup_iterations},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"log_every", c.log_every}};
}

GeneratorTrainConfig generator_training_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"iterations", "warmup_iterations", "learning_rate", "batch_size", "seed", "log_every"},
                        "generator training config");
  GeneratorTrainConfig c;
  json_util::read(j, "iterations", c.iterations);
  json_util::read(j, "warmup_iterations", c.warmup_iterations);
  json_util::read(j, "learning_rate", c.learning_rate);
  json_util::read(j, "batch_size", c.batch_size);
  json_util::read(j, "seed", c.seed);
  json_util::read(j, "log_every", c.log_every);
  return c;
}

nlohmann::json guidance_json(const GuidanceConfig& g) {
  return {{"omega", g.omega},
          {"per_category_omega", g.per_category_omega},
          {"sampler_steps", g.sampler_steps},
          {"seed", g.seed}};
}

GuidanceConfig guidance_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"omega", "per_category_omega", "sampler_steps", "seed"}, "guidance config");
  GuidanceConfig g;
  json_util::read(j, "omega", g.omega);
  json_util::read(j, "per_category_omega", g.per_category_omega);
  json_util::read(j, "sampler_steps", g.sampler_steps);
  json_util::read(j, "seed", g.seed);
  return g;
}

nlohmann::json dataset_json(const DatasetSource& d) {
  return {{"kind", d.kind}, {"root", d.root.generic_string()}, {"per_category", d.per_category}, {"seed", d.seed}};
}

DatasetSource dataset_from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"kind", "root", "per_category", "seed"}, "dataset source");
  DatasetSource d;
  json_util::read(j, "kind", d.kind);
  if (j.contains("root")) d.root = j.at("root").get<std::string>();
  json_util::read(j, "per_category", d.per_category);
  json_util::read(j, "seed", d.seed);
  require(d.kind == "synthetic" || d.kind == "real", "dataset kind must be 'synthetic' or 'real', got '{}'", d.kind);
  return d;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json detector_list = nlohmann::json::array();
  for (const auto& d : detectors) detector_list.push_back(d.to_json());
  return {{"dataset", dataset_json(dataset)},
          {"resolution", resolution},
          {"channels", channels},
          {"categories", categories},
          {"autoencoder", autoencoder.to_json()},
          {"autoencoder_training", autoencoder_training.to_json()},
          {"generator", generator.to_json()},
          {"generator_training", generator_training_json(generator_training)},
          {"mask_ddpm", mask_ddpm.to_json()},
          {"guidance", guidance_json(guidance)},
          {"ablation_omegas", ablation_omegas},
          {"substitution_split", split_json(substitution_split)},
          {"expansion_split", split_json(expansion_split)},
          {"expansion_per_category", expansion_per_category},
          {"detectors", detector_list},
          {"seeds", seeds},
          {"run_seed", run_seed},
          {"generation_batch", generation_batch},
          {"output_dir", output_dir.generic_string()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"dataset", "resolution", "channels", "categories", "autoencoder", "autoencoder_training",
                            "generator", "generator_training", "mask_ddpm", "guidance", "ablation_omegas",
                            "substitution_split", "expansion_split", "expansion_per_category", "detectors", "seeds",
                            "run_seed", "generation_batch", "output_dir"},
                        "experiment config");
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  json_util::read(j, "resolution", c.resolution);
  json_util::read(j, "channels", c.channels);
  json_util::read(j, "categories", c.categories);
  if (j.contains("autoencoder")) c.autoencoder = AutoencoderConfig::from_json(j.at("autoencoder"));
  if (j.contains("autoencoder_training")) {
    c.autoencoder_training = AutoencoderTrainConfig::from_json(j.at("autoencoder_training"));
  }
  if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
  if (j.contains("generator_training")) c.generator_training = generator_training_from_json(j.at("generator_training"));
  if (j.contains("mask_ddpm")) c.mask_ddpm = MaskDDPMConfig::from_json(j.at("mask_ddpm"));
  if (j.contains("guidance")) c.guidance = guidance_from_json(j.at("guidance"));
  json_util::read(j, "ablation_omegas", c.ablation_omegas);
  if (j.contains("substitution_split")) c.substitution_split = split_from_json(j.at("substitution_split"), "substitution split");
  if (j.contains("expansion_split")) c.expansion_split = split_from_json(j.at("expansion_split"), "expansion split");
  json_util::read(j, "expansion_per_category", c.expansion_per_category);
  if (j.contains("detectors")) {
    c.detectors.clear();
    for (const auto& d : j.at("detectors")) c.detectors.push_back(DetectorConfig::from_json(d));
  }
  json_util::read(j, "seeds", c.seeds);
  json_util::read(j, "run_seed", c.run_seed);
  json_util::read(j, "generation_batch", c.generation_batch);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  require(!c.seeds.empty(), "experiment config needs at least one seed");
  require(!c.categories.empty(), "experiment config needs at least one category");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read experiment config {}", path.string());
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail("experiment config {} is not valid JSON: {}", path.string(), e.what());
  }
  return from_json(document);
}

std::string ExperimentConfig::hash() const { return short_hash(to_json().dump()); }

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  c.autoencoder.image_channels = channels;
  c.generator.categories = categories;
  c.generator.resolution = resolution;
  c.generator.latent_factor = c.autoencoder.spatial_factor();
  c.generator.mask_encoder.resolution = resolution;
  c.generator.mask_encoder.num_classes = static_cast<int>(categories.size()) + 1;
  c.generator.denoiser.latent_channels = c.autoencoder.latent_channels;
  c.mask_ddpm.categories = categories;

  c.autoencoder_training.seed = substream_seed(run_seed, "stage/autoencoder");
  c.generator.init_seed = substream_seed(run_seed, "stage/generator-init");
  c.generator_training.seed = substream_seed(run_seed, "stage/generator-train");
  c.mask_ddpm.seed = substream_seed(run_seed, "stage/mask-ddpm");
  c.guidance.seed = substream_seed(run_seed, "stage/sampling");
  c.substitution_split.seed = substream_seed(run_seed, "stage/substitution-split");
  c.expansion_split.seed = substream_seed(run_seed, "stage/expansion-split");
  return c;
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.dataset.kind = "synthetic";
  c.dataset.per_category = 30;
  c.resolution = 64;
  c.autoencoder_training.steps = 800;
  c.generator_training.iterations = 1000;
  c.generator_training.warmup_iterations = 100;
  c.generator_training.learning_rate = 5e-4;
  c.generator_training.batch_size = 4;
  c.mask_ddpm.resolution = 32;
  c.mask_ddpm.base_channels = 16;
  c.mask_ddpm.time_dim = 64;
  c.mask_ddpm.iterations = 400;
  c.mask_ddpm.batch_size = 16;
  c.mask_ddpm.learning_rate = 1e-3;
  c.mask_ddpm.sampler_steps = 40;
  c.guidance.sampler_steps = 25;
  c.expansion_per_category = 10;
  c.detectors = {DetectorConfig::csepnet_like()};
  c.detectors.front().max_steps = 150;
  c.seeds = {0, 1};
  c.generation_batch = 16;
  c.output_dir = "runs/desk";
  return c;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::dataset:
      return "dataset";
    case Stage::autoencoder:
      return "autoencoder";
    case Stage::generator:
      return "generator";
    case Stage::mask_ddpm:
      return "mask-ddpm";
    case Stage::ablation:
      return "ablation";
    case Stage::substitution:
      return "substitution";
    case Stage::expansion:
      return "expansion";
  }
  return "dataset";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::dataset,  Stage::autoencoder,  Stage::generator, Stage::mask_ddpm,
                                         Stage::ablation, Stage::substitution, Stage::expansion};
  return stages;
}

Stage parse_stage(std::string_view text) {
  for (auto stage : all_stages()) {
    if (to_string(stage) == text) return stage;
  }
  fail("unknown stage '{}'", text);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& a : artifacts) {
    list.push_back({{"stage", a.stage}, {"path", a.path}, {"sha256", a.sha256}, {"seconds", a.seconds}});
  }
  return {{"config_hash", config_hash}, {"code_version", code_version}, {"config", config}, {"artifacts", list}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  json_util::check_keys(j, {"config_hash", "code_version", "config", "artifacts"}, "run manifest");
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.code_version = j.at("code_version").get<std::string>();
  m.config = j.at("config");
  for (const auto& a : j.at("artifacts")) {
    m.artifacts.push_back({a.at("stage").get<std::string>(), a.at("path").get<std::string>(),
                           a.at("sha256").get<std::string>(), a.at("seconds").get<double>()});
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write manifest {}", path.string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read manifest {}", path.string());
  return from_json(nlohmann::json::parse(in));
}

const Artifact* RunManifest::find(const std::string& path) const {
  for (const auto& a : artifacts) {
    if (a.path == path) return &a;
  }
  return nullptr;
}

std::string code_version() { return DEFFILLER_VERSION; }

}  // namespace deffiller::harness
