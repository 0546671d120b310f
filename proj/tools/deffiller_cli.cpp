#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <torch/torch.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/error.hpp"
#include "deffiller/features.hpp"
#include "deffiller/generator.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/image_io.hpp"
#include "deffiller/mask_producer.hpp"

namespace fs = std::filesystem;
using namespace deffiller;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write {}", path.string());
  out << text;
}

DetectorConfig detector_preset(const std::string& name) {
  if (name == "csepnet-like") return DetectorConfig::csepnet_like();
  if (name == "tsernet-like") return DetectorConfig::tsernet_like();
  if (name == "minet-like") return DetectorConfig::minet_like();
  fail("unknown detector preset '{}' (expected csepnet-like, tsernet-like, or minet-like)", name);
}

std::vector<DetectorConfig> detector_presets(const std::vector<std::string>& names, int max_steps) {
  std::vector<DetectorConfig> configs;
  for (const auto& name : names) {
    auto c = detector_preset(name);
    if (max_steps > 0) c.max_steps = max_steps;
    configs.push_back(c);
  }
  return configs;
}

// Masks laid out as <root>/<category>/masks/*.png, as written by generate
// or train-mask-ddpm --produce.
PairSet load_mask_conditions(const fs::path& root, int resolution, int channels) {
  std::vector<MaskImagePair> pairs;
  for (const auto& category : default_categories()) {
    const auto dir = root / category / "masks";
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      MaskImagePair pair;
      pair.id = category + "/" + file.stem().string();
      pair.category = category;
      pair.mask = image_io::resize_nearest((image_io::read_unit(file, 1)[0] >= 0.5).to(torch::kFloat32), resolution,
                                           resolution);
      pair.image = torch::zeros({channels, resolution, resolution});
      pairs.push_back(std::move(pair));
    }
  }
  require(!pairs.empty(), "no masks found under {}", root.string());
  return PairSet(std::move(pairs), resolution);
}

void print_progress(int step, double loss) { std::cerr << fmt::format("step {} loss {:.5f}\n", step, loss); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-conditioned defect image generation and evaluation"};
  app.require_subcommand(1);

  // make-synthetic
  auto* synth = app.add_subcommand("make-synthetic", "Write a procedural mask-image dataset");
  fs::path synth_out;
  int synth_per_category = 20;
  std::uint64_t synth_seed = 0;
  int synth_resolution = 64;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--per-category", synth_per_category, "Pairs per category");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--resolution", synth_resolution, "Square resolution");

  // train-ae
  auto* train_ae = app.add_subcommand("train-ae", "Train the image autoencoder");
  fs::path ae_data;
  fs::path ae_out;
  int ae_resolution = 64;
  int ae_channels = 1;
  AutoencoderConfig ae_config;
  AutoencoderTrainConfig ae_train;
  train_ae->add_option("--data", ae_data, "Dataset directory")->required();
  train_ae->add_option("--out", ae_out, "Checkpoint path")->required();
  train_ae->add_option("--resolution", ae_resolution, "Square resolution");
  train_ae->add_option("--channels", ae_channels, "Image channels (1 or 3)");
  train_ae->add_option("--latent-channels", ae_config.latent_channels, "Latent channels");
  train_ae->add_option("--stages", ae_config.downsample_stages, "Stride-2 stages (factor 2^stages)");
  train_ae->add_option("--steps", ae_train.steps, "Training steps");
  train_ae->add_option("--batch", ae_train.batch_size, "Batch size");
  train_ae->add_option("--lr", ae_train.learning_rate, "Learning rate");
  train_ae->add_option("--seed", ae_train.seed, "Seed");

  // train-gen
  auto* train_gen = app.add_subcommand("train-gen", "Train the mask-conditioned generator");
  fs::path gen_data;
  fs::path gen_ae;
  fs::path gen_out;
  fs::path gen_config_path;
  GeneratorConfig gen_config;
  GeneratorTrainConfig gen_train;
  gen_train.log_every = 100;
  train_gen->add_option("--data", gen_data, "Dataset directory")->required();
  train_gen->add_option("--autoencoder", gen_ae, "Autoencoder checkpoint")->required();
  train_gen->add_option("--out", gen_out, "Checkpoint path")->required();
  train_gen->add_option("--config", gen_config_path, "Generator config JSON");
  train_gen->add_option("--iterations", gen_train.iterations, "Training iterations")->capture_default_str();
  train_gen->add_option("--warmup", gen_train.warmup_iterations, "Warm-up iterations")->capture_default_str();
  train_gen->add_option("--lr", gen_train.learning_rate, "Learning rate")->capture_default_str();
  train_gen->add_option("--batch", gen_train.batch_size, "Batch size")->capture_default_str();
  train_gen->add_option("--seed", gen_train.seed, "Seed");
  train_gen->add_option("--log-every", gen_train.log_every, "Loss log cadence");
  train_gen->add_option("--timesteps", gen_config.schedule_steps, "Diffusion steps T");
  train_gen->add_flag("--freeze-backbone", gen_config.freeze_backbone,
                      "Train only the mask encoder, downsampler, gated layers, first conv, and null prompt");

  // train-mask-ddpm
  auto* train_mask = app.add_subcommand("train-mask-ddpm", "Train the mask DDPM and optionally produce masks");
  fs::path mask_data;
  fs::path mask_out;
  fs::path mask_produce_dir;
  int mask_produce_count = 300;
  int mask_target = 64;
  bool mask_reference = false;
  MaskDDPMConfig mask_config;
  train_mask->add_option("--data", mask_data, "Dataset directory")->required();
  train_mask->add_option("--out", mask_out, "Checkpoint path")->required();
  train_mask->add_flag("--reference", mask_reference, "Use the reference setting (64x64, 200 epochs, batch 32)");
  train_mask->add_option("--resolution", mask_config.resolution, "Training resolution");
  train_mask->add_option("--iterations", mask_config.iterations, "Iterations per model");
  train_mask->add_option("--epochs", mask_config.epochs, "Epochs per model (overrides iterations)");
  train_mask->add_option("--batch", mask_config.batch_size, "Batch size");
  train_mask->add_option("--lr", mask_config.learning_rate, "Learning rate");
  train_mask->add_option("--seed", mask_config.seed, "Seed");
  train_mask->add_flag("--class-conditioned", mask_config.class_conditioned, "One shared class-conditioned model");
  train_mask->add_option("--produce", mask_produce_dir, "Write produced masks here after training");
  train_mask->add_option("--count", mask_produce_count, "Masks per category to produce");
  train_mask->add_option("--target-resolution", mask_target, "Resolution of produced masks");

  // generate
  auto* generate = app.add_subcommand("generate", "Generate images for a set of masks");
  fs::path generate_ckpt;
  fs::path generate_masks;
  fs::path generate_out;
  GuidanceConfig guidance;
  int generate_batch = 16;
  generate->add_option("--generator", generate_ckpt, "Generator checkpoint")->required();
  generate->add_option("--masks", generate_masks, "Directory with <category>/masks/*.png")->required();
  generate->add_option("--out", generate_out, "Output dataset directory")->required();
  generate->add_option("--omega", guidance.omega, "Guidance scale")->capture_default_str();
  generate->add_option("--sampler-steps", guidance.sampler_steps, "Denoising steps (0 = all)");
  generate->add_option("--seed", guidance.seed, "Seed");
  generate->add_option("--batch", generate_batch, "Sampling batch size");

  // eval-fid
  auto* eval_fid = app.add_subcommand("eval-fid", "Per-category FID of a generated set against a real set");
  fs::path fid_ae;
  fs::path fid_real;
  fs::path fid_generated;
  fs::path fid_out;
  int fid_resolution = 64;
  eval_fid->add_option("--autoencoder", fid_ae, "Autoencoder checkpoint used as the feature extractor")->required();
  eval_fid->add_option("--real", fid_real, "Real dataset directory")->required();
  eval_fid->add_option("--generated", fid_generated, "Generated dataset directory")->required();
  eval_fid->add_option("--resolution", fid_resolution, "Square resolution");
  eval_fid->add_option("--out", fid_out, "CSV output");

  // ablate-gs
  auto* ablate = app.add_subcommand("ablate-gs", "FID per category across guidance scales");
  fs::path ablate_ckpt;
  fs::path ablate_data;
  fs::path ablate_out;
  std::vector<double> ablate_omegas{1.0, 3.0, 5.0, 7.0};
  GuidanceConfig ablate_guidance;
  int ablate_batch = 16;
  ablate->add_option("--generator", ablate_ckpt, "Generator checkpoint")->required();
  ablate->add_option("--data", ablate_data, "Reference dataset directory")->required();
  ablate->add_option("--omegas", ablate_omegas, "Guidance scales")->delimiter(',');
  ablate->add_option("--sampler-steps", ablate_guidance.sampler_steps, "Denoising steps (0 = all)");
  ablate->add_option("--seed", ablate_guidance.seed, "Seed");
  ablate->add_option("--batch", ablate_batch, "Sampling batch size");
  ablate->add_option("--out", ablate_out, "CSV output");

  // run-substitution / run-expansion share detector options.
  std::vector<std::string> detector_names{"csepnet-like"};
  std::vector<std::uint64_t> seeds{0};
  int detector_steps = 0;
  GuidanceConfig protocol_guidance;
  int protocol_batch = 16;
  fs::path protocol_ckpt;
  fs::path protocol_data;
  fs::path protocol_out;
  auto add_protocol_options = [&](CLI::App* cmd) {
    cmd->add_option("--generator", protocol_ckpt, "Generator checkpoint")->required();
    cmd->add_option("--data", protocol_data, "Dataset directory")->required();
    cmd->add_option("--out", protocol_out, "Report directory")->required();
    cmd->add_option("--detectors", detector_names, "Detector presets")->delimiter(',');
    cmd->add_option("--seeds", seeds, "Detector seeds")->delimiter(',');
    cmd->add_option("--detector-steps", detector_steps, "Override the detector step budget");
    cmd->add_option("--omega", protocol_guidance.omega, "Guidance scale");
    cmd->add_option("--sampler-steps", protocol_guidance.sampler_steps, "Denoising steps (0 = all)");
    cmd->add_option("--generation-seed", protocol_guidance.seed, "Sampling seed");
    cmd->add_option("--batch", protocol_batch, "Sampling batch size");
  };
  auto* substitution = app.add_subcommand("run-substitution", "Detector trained on real vs generated images");
  add_protocol_options(substitution);
  auto* expansion = app.add_subcommand("run-expansion", "Detector trained on a scarce split with and without expansion");
  add_protocol_options(expansion);
  fs::path expansion_masks;
  int expansion_added = 300;
  expansion->add_option("--mask-ddpm", expansion_masks, "Mask DDPM checkpoint")->required();
  expansion->add_option("--added", expansion_added, "Generated pairs per category")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Run a declarative experiment, re-execute a manifest, or print reports");
  fs::path report_config;
  fs::path report_manifest;
  fs::path report_output;
  fs::path report_show;
  std::vector<std::string> report_stages;
  bool report_desk = false;
  report->add_option("--config", report_config, "Experiment config JSON");
  report->add_flag("--desk", report_desk, "Use the built-in desk-scale synthetic config");
  report->add_option("--stages", report_stages, "Subset of stages to run")->delimiter(',');
  report->add_option("--output", report_output, "Output directory (overrides the config)");
  report->add_option("--reproduce", report_manifest, "Manifest to re-execute and compare");
  report->add_option("--show", report_show, "Print the reports of a run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto pairs = synth_dataset(synth_per_category, synth_seed, synth_resolution);
      save_pairs(pairs, synth_out);
      std::cout << fmt::format("wrote {} pairs to {}\n", pairs.size(), synth_out.string());
    } else if (*train_ae) {
      ae_config.image_channels = ae_channels;
      const auto pairs = load_pairs(ae_data, ae_resolution, ae_channels);
      const auto params = train_autoencoder(pairs, ae_config, ae_train);
      save_autoencoder(params, ae_out);
      std::cout << fmt::format("reconstruction loss {:.5f} -> {:.5f}, latent scale {:.4f}\n", params.initial_loss,
                               params.final_loss, params.latent_scale);
    } else if (*train_gen) {
      auto autoencoder = load_autoencoder(gen_ae);
      if (!gen_config_path.empty()) {
        std::ifstream in(gen_config_path);
        require(static_cast<bool>(in), "cannot read {}", gen_config_path.string());
        const bool freeze = gen_config.freeze_backbone;
        gen_config = GeneratorConfig::from_json(nlohmann::json::parse(in));
        gen_config.freeze_backbone = gen_config.freeze_backbone || freeze;
      }
      gen_config.latent_factor = autoencoder.config.spatial_factor();
      gen_config.denoiser.latent_channels = autoencoder.config.latent_channels;
      gen_config.init_seed = gen_train.seed;
      const auto pairs = load_pairs(gen_data, gen_config.resolution, autoencoder.config.image_channels);
      auto state = make_generator_state(gen_config, std::move(autoencoder));
      gen_train.on_log = print_progress;
      train_generator(state, pairs, gen_train);
      save_generator(state, gen_out);
    } else if (*train_mask) {
      if (mask_reference) {
        const auto seed = mask_config.seed;
        mask_config = MaskDDPMConfig::reference();
        mask_config.seed = seed;
      }
      const auto pairs = load_pairs(mask_data, mask_config.resolution);
      auto params = train_mask_ddpm(pairs, mask_config);
      save_mask_ddpm(params, mask_out);
      if (!mask_produce_dir.empty()) {
        const auto masks = produce_masks(params, mask_produce_count, mask_target, mask_config.seed);
        write_produced_masks(masks, mask_produce_dir);
        std::cout << fmt::format("produced {} masks in {}\n", masks.size(), mask_produce_dir.string());
      }
    } else if (*generate) {
      auto state = load_generator(generate_ckpt);
      const auto conditions =
          load_mask_conditions(generate_masks, state.config.resolution, state.autoencoder.config.image_channels);
      harness::DiffusionGenerator generator(state, guidance, generate_batch);
      const auto generated = harness::generate_pairs(generator, conditions, guidance.seed);
      save_pairs(generated, generate_out);
      std::vector<torch::Tensor> images;
      std::vector<torch::Tensor> masks;
      for (std::size_t i = 0; i < std::min<std::size_t>(generated.size(), 12); ++i) {
        images.push_back(generated[i].image);
        masks.push_back(generated[i].mask);
      }
      harness::emit_grid(images, masks, generate_out / "grid.png");
      std::cout << fmt::format("generated {} images in {}\n", generated.size(), generate_out.string());
    } else if (*eval_fid) {
      const auto extractor = load_autoencoder(fid_ae);
      const auto real = load_pairs(fid_real, fid_resolution, extractor.config.image_channels);
      const auto generated = load_pairs(fid_generated, fid_resolution, extractor.config.image_channels);
      const auto table = harness::eval_generation_quality(extractor, real, generated);
      std::cout << table.to_table();
      if (!fid_out.empty()) write_file(fid_out, table.to_csv());
    } else if (*ablate) {
      auto state = load_generator(ablate_ckpt);
      const auto reference = load_pairs(ablate_data, state.config.resolution, state.autoencoder.config.image_channels);
      const auto table = harness::ablate_guidance_scale(state, reference, ablate_omegas, ablate_guidance, ablate_batch);
      std::cout << table.to_table();
      if (!ablate_out.empty()) write_file(ablate_out, table.to_csv());
    } else if (*substitution || *expansion) {
      auto state = load_generator(protocol_ckpt);
      const auto dataset = load_pairs(protocol_data, state.config.resolution, state.autoencoder.config.image_channels);
      harness::DiffusionGenerator generator(state, protocol_guidance, protocol_batch);
      harness::ProtocolReport result;
      if (*substitution) {
        harness::SubstitutionSettings settings;
        settings.detectors = detector_presets(detector_names, detector_steps);
        settings.seeds = seeds;
        settings.generation_seed = protocol_guidance.seed;
        result = harness::run_substitution(dataset, generator, settings);
      } else {
        auto mask_params = load_mask_ddpm(expansion_masks);
        harness::ExpansionSettings settings;
        settings.detectors = detector_presets(detector_names, detector_steps);
        settings.seeds = seeds;
        settings.added_per_category = expansion_added;
        settings.generation_seed = protocol_guidance.seed;
        result = harness::run_expansion(dataset, generator, harness::mask_source_from(mask_params), settings);
      }
      write_file(protocol_out / (result.protocol + ".csv"), result.to_csv());
      write_file(protocol_out / (result.protocol + ".txt"), result.to_table());
      std::cout << result.to_table();
      if (*expansion) std::cout << fmt::format("mean delta S_alpha: {:+.4f}\n", result.mean_s_alpha_delta("DefFiller"));
    } else if (*report) {
      if (!report_show.empty()) {
        for (const auto* name : {"ablation_fid.txt", "substitution.txt", "expansion.txt"}) {
          const auto path = report_show / "reports" / name;
          if (!fs::exists(path)) continue;
          std::ifstream in(path);
          std::cout << "== " << name << "\n" << in.rdbuf() << "\n";
        }
      } else if (!report_manifest.empty()) {
        const auto manifest = harness::RunManifest::load(report_manifest);
        require(!report_output.empty(), "--reproduce needs --output for the re-execution");
        const auto check = harness::reproduce(manifest, report_manifest.parent_path(), report_output, &std::cerr);
        for (const auto& m : check.mismatches) std::cout << "MISMATCH " << m << "\n";
        std::cout << (check.identical ? "reproduced: every report is bit-identical\n" : "reproduction differs\n");
        return check.identical ? 0 : 2;
      } else {
        require(report_desk || !report_config.empty(), "report needs --config, --desk, --reproduce, or --show");
        auto config = report_desk ? harness::desk_config() : harness::ExperimentConfig::load(report_config);
        if (!report_output.empty()) config.output_dir = report_output;
        std::vector<harness::Stage> stages;
        for (const auto& s : report_stages) stages.push_back(harness::parse_stage(s));
        const auto manifest = harness::run_experiment(config, stages, &std::cerr);
        std::cout << fmt::format("manifest {} ({} artifacts)\n", (config.output_dir / "manifest.json").string(),
                                 manifest.artifacts.size());
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
