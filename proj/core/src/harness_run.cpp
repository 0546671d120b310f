#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/hashing.hpp"

namespace fs = std::filesystem;

namespace deffiller::harness {

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kDatasetDir = "dataset";
constexpr const char* kAutoencoderFile = "autoencoder.pt";
constexpr const char* kGeneratorFile = "generator.pt";
constexpr const char* kMaskDdpmFile = "mask_ddpm.pt";

class Run {
 public:
  Run(ExperimentConfig config, std::ostream* log) : config_(std::move(config)), log_(log) {
    out_ = config_.output_dir;
    fs::create_directories(out_);
    const auto manifest_path = out_ / kManifestName;
    if (fs::exists(manifest_path)) {
      auto previous = RunManifest::load(manifest_path);
      if (previous.config_hash == config_.hash()) manifest_ = std::move(previous);
    }
    manifest_.config_hash = config_.hash();
    manifest_.code_version = code_version();
    manifest_.config = config_.to_json();
  }

  void execute(Stage stage) {
    const auto start = std::chrono::steady_clock::now();
    note("stage {}", to_string(stage));
    stage_ = std::string(to_string(stage));
    switch (stage) {
      case Stage::dataset:
        dataset_stage();
        break;
      case Stage::autoencoder:
        autoencoder_stage();
        break;
      case Stage::generator:
        generator_stage();
        break;
      case Stage::mask_ddpm:
        mask_ddpm_stage();
        break;
      case Stage::ablation:
        ablation_stage();
        break;
      case Stage::substitution:
        substitution_stage();
        break;
      case Stage::expansion:
        expansion_stage();
        break;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (auto& a : manifest_.artifacts) {
      if (a.stage == stage_) a.seconds = seconds;
    }
    manifest_.save(out_ / kManifestName);
  }

  RunManifest manifest() const { return manifest_; }

 private:
  template <typename... Args>
  void note(fmt::format_string<Args...> format, Args&&... args) {
    if (log_) *log_ << fmt::format(format, std::forward<Args>(args)...) << std::endl;
  }

  void record(const std::string& relative) {
    auto& list = manifest_.artifacts;
    list.erase(std::remove_if(list.begin(), list.end(), [&](const Artifact& a) { return a.path == relative; }),
               list.end());
    list.push_back({stage_, relative, sha256_file(out_ / relative), 0.0});
  }

  void write_text(const std::string& relative, const std::string& text) {
    const auto path = out_ / relative;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write {}", path.string());
    out << text;
    out.close();
    record(relative);
  }

  void require_input(const char* relative, Stage producer) const {
    require(fs::exists(out_ / relative), "{} is missing; run the '{}' stage first", (out_ / relative).string(),
            to_string(producer));
  }

  PairSet dataset() {
    if (!dataset_) {
      require_input(kDatasetDir, Stage::dataset);
      dataset_ = load_pairs(out_ / kDatasetDir, config_.resolution, config_.channels, config_.categories);
    }
    return *dataset_;
  }

  GeneratorState& generator() {
    if (!generator_) {
      require_input(kGeneratorFile, Stage::generator);
      generator_ = load_generator(out_ / kGeneratorFile);
    }
    return *generator_;
  }

  void dataset_stage() {
    PairSet pairs;
    if (config_.dataset.kind == "synthetic") {
      pairs = synth_dataset(config_.dataset.per_category, config_.dataset.seed, config_.resolution, config_.categories);
    } else {
      pairs = load_pairs(config_.dataset.root, config_.resolution, config_.channels, config_.categories);
    }
    fs::remove_all(out_ / kDatasetDir);
    save_pairs(pairs, out_ / kDatasetDir);
    record(fmt::format("{}/manifest.jsonl", kDatasetDir));
    dataset_.reset();
    note("  {} pairs", pairs.size());
  }

  void autoencoder_stage() {
    const auto params = train_autoencoder(dataset(), config_.autoencoder, config_.autoencoder_training);
    save_autoencoder(params, out_ / kAutoencoderFile);
    record(kAutoencoderFile);
    note("  reconstruction loss {:.5f} -> {:.5f}", params.initial_loss, params.final_loss);
  }

  void generator_stage() {
    require_input(kAutoencoderFile, Stage::autoencoder);
    auto state = make_generator_state(config_.generator, load_autoencoder(out_ / kAutoencoderFile));
    auto training = config_.generator_training;
    if (log_ && training.log_every > 0) {
      training.on_log = [this](int step, double loss) { note("  step {} loss {:.5f}", step, loss); };
    }
    train_generator(state, dataset(), training);
    save_generator(state, out_ / kGeneratorFile);
    record(kGeneratorFile);
    generator_.reset();
  }

  void mask_ddpm_stage() {
    const auto params = train_mask_ddpm(dataset(), config_.mask_ddpm);
    save_mask_ddpm(params, out_ / kMaskDdpmFile);
    record(kMaskDdpmFile);
  }

  void ablation_stage() {
    const auto table = ablate_guidance_scale(generator(), dataset(), config_.ablation_omegas, config_.guidance,
                                             config_.generation_batch);
    write_text("reports/ablation_fid.csv", table.to_csv());
    write_text("reports/ablation_fid.txt", table.to_table());
    note("{}", table.to_table());
  }

  void substitution_stage() {
    DiffusionGenerator gen(generator(), config_.guidance, config_.generation_batch);
    SubstitutionSettings settings;
    settings.split = config_.substitution_split;
    settings.detectors = config_.detectors;
    settings.seeds = config_.seeds;
    settings.generation_seed = config_.guidance.seed;
    const auto report = run_substitution(dataset(), gen, settings);
    write_text("reports/substitution.csv", report.to_csv());
    write_text("reports/substitution.txt", report.to_table());
    note("{}", report.to_table());

    // One generated example per category for visual inspection.
    std::vector<MaskImagePair> examples;
    for (const auto& category : config_.categories) {
      const auto subset = dataset().of_category(category);
      if (!subset.empty()) examples.push_back(subset[0]);
    }
    if (!examples.empty()) {
      const PairSet conditions(examples, config_.resolution, config_.categories);
      const auto generated = generate_pairs(gen, conditions, config_.guidance.seed);
      std::vector<torch::Tensor> images;
      std::vector<torch::Tensor> masks;
      for (const auto& p : generated) {
        images.push_back(p.image);
        masks.push_back(p.mask);
      }
      emit_grid(images, masks, out_ / "grids/substitution.png");
      record("grids/substitution.png");
    }
  }

  void expansion_stage() {
    require_input(kMaskDdpmFile, Stage::mask_ddpm);
    auto mask_params = load_mask_ddpm(out_ / kMaskDdpmFile);
    DiffusionGenerator gen(generator(), config_.guidance, config_.generation_batch);
    ExpansionSettings settings;
    settings.split = config_.expansion_split;
    settings.detectors = config_.detectors;
    settings.seeds = config_.seeds;
    settings.added_per_category = config_.expansion_per_category;
    settings.mask_seed = config_.mask_ddpm.seed;
    settings.generation_seed = config_.guidance.seed;
    const auto report = run_expansion(dataset(), gen, mask_source_from(mask_params), settings);
    write_text("reports/expansion.csv", report.to_csv());
    auto table = report.to_table();
    table += fmt::format("mean delta S_alpha (DefFiller - None): {:+.4f}\n", report.mean_s_alpha_delta("DefFiller"));
    write_text("reports/expansion.txt", table);
    note("{}", table);
  }

  ExperimentConfig config_;
  std::ostream* log_;
  fs::path out_;
  RunManifest manifest_;
  std::string stage_;
  std::optional<PairSet> dataset_;
  std::optional<GeneratorState> generator_;
};

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config, const std::vector<Stage>& stages, std::ostream* log) {
  Run run(config.resolved(), log);
  auto ordered = stages.empty() ? all_stages() : stages;
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());
  for (auto stage : ordered) run.execute(stage);
  return run.manifest();
}

ReproductionCheck reproduce(const RunManifest& manifest, const fs::path& original_dir, const fs::path& output_dir,
                            std::ostream* log) {
  auto config = ExperimentConfig::from_json(manifest.config);
  config.output_dir = output_dir;
  ReproductionCheck check;
  if (manifest.code_version != code_version()) {
    check.mismatches.push_back(
        fmt::format("code version differs: manifest {}, running {}", manifest.code_version, code_version()));
  }
  const auto rerun = run_experiment(config, {}, log);
  for (const auto& artifact : manifest.artifacts) {
    if (artifact.path.rfind("reports/", 0) != 0) continue;
    const auto* fresh = rerun.find(artifact.path);
    if (fresh == nullptr) {
      check.mismatches.push_back(artifact.path + ": not produced by the re-execution");
      continue;
    }
    if (fresh->sha256 != artifact.sha256) {
      check.mismatches.push_back(artifact.path + ": content differs from the manifest");
      continue;
    }
    const auto original = original_dir / artifact.path;
    if (fs::exists(original) && sha256_file(original) != fresh->sha256) {
      check.mismatches.push_back(artifact.path + ": content differs from the original run directory");
    }
  }
  check.identical = check.mismatches.empty();
  return check;
}

}  // namespace deffiller::harness
