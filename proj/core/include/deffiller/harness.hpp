#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/datasets.hpp"
#include "deffiller/detector.hpp"
#include "deffiller/generator.hpp"
#include "deffiller/mask_producer.hpp"
#include "deffiller/metrics.hpp"

namespace deffiller::harness {

// ---------------------------------------------------------------------------
// Defect localisation used by the mask-adherence gate.

/// Model-free defect localisation: |pixel - median| over the channel-mean
/// image, thresholded at 2 x MAD (floored at 1e-3), then the union of
/// 8-connected components holding at least 20% of the largest component's
/// pixels. Returns an (H, W) {0,1} map.
torch::Tensor localize_defect(const torch::Tensor& image);

/// |a & b| / |a | b| for binary maps; 1 when both are empty.
double mask_iou(const torch::Tensor& a, const torch::Tensor& b);

/// Best IoU of `mask` against any of `references` (N, H, W).
double nearest_iou(const torch::Tensor& mask, const torch::Tensor& references);

// ---------------------------------------------------------------------------
// Image generators used by the protocols.

class ImageGenerator {
 public:
  virtual ~ImageGenerator() = default;
  /// One (C, H, W) image per condition pair; only mask and category are
  /// meaningful to a real generator.
  virtual std::vector<torch::Tensor> generate(const std::vector<MaskImagePair>& conditions,
                                              std::uint64_t seed) = 0;
  virtual std::string id() const = 0;
};

/// The mask-conditioned diffusion generator with guided sampling.
class DiffusionGenerator final : public ImageGenerator {
 public:
  DiffusionGenerator(GeneratorState& state, GuidanceConfig guidance, int batch_size = 32);
  std::vector<torch::Tensor> generate(const std::vector<MaskImagePair>& conditions,
                                      std::uint64_t seed) override;
  std::string id() const override { return "deffiller"; }

 private:
  GeneratorState* state_;
  GuidanceConfig guidance_;
  int batch_size_;
};

/// Returns each condition's own real image.
class RealImageOracle final : public ImageGenerator {
 public:
  std::vector<torch::Tensor> generate(const std::vector<MaskImagePair>& conditions,
                                      std::uint64_t seed) override;
  std::string id() const override { return "real-oracle"; }
};

/// Pairs the generated images with their conditions, marked as generated.
PairSet generate_pairs(ImageGenerator& generator, const PairSet& conditions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tables.

/// FID table: one row per label (guidance scale or method), one column per
/// category, plus AVG.
struct FidTable {
  std::string row_header = "omega";
  std::vector<std::string> categories;
  struct Row {
    std::string label;
    std::vector<double> values;
    double average = 0.0;
  };
  std::vector<Row> rows;
  std::string extractor_id;

  void add_row(std::string label, std::vector<double> values);
  /// Row with the lowest AVG.
  std::size_t best_row() const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Detection metrics of one (detector, arm, seed) training.
struct ProtocolRow {
  std::string detector;
  std::string arm;
  std::uint64_t seed = 0;
  metrics::MetricReport report;
};

struct ProtocolReport {
  std::string protocol;
  std::vector<std::string> arms;
  std::vector<ProtocolRow> rows;
  int train_pairs = 0;
  int test_pairs = 0;
  int added_pairs = 0;

  /// Long form: detector,arm,seed,category,metric,value.
  std::string to_csv() const;
  /// Seed means per (detector, arm) with columns S_alpha, M, E_max, F_max,
  /// followed by per-seed rows.
  std::string to_table() const;
  /// Mean over detectors and seeds of S_alpha(arm) - S_alpha(arms[0]).
  double mean_s_alpha_delta(const std::string& arm) const;
};

// ---------------------------------------------------------------------------
// Protocols.

/// Per-category FID of generated vs real images for each guidance scale;
/// masks of `reference` are the conditions.
FidTable ablate_guidance_scale(GeneratorState& state, const PairSet& reference,
                               const std::vector<double>& omegas, const GuidanceConfig& base,
                               int batch_size = 32);

/// Per-category FID of `generated` against `real` (one row labelled `label`).
FidTable eval_generation_quality(const AutoencoderParams& extractor, const PairSet& real,
                                 const PairSet& generated, const std::string& label = "generated");

struct SubstitutionSettings {
  SplitSpec split{9, 1, 0};
  std::vector<DetectorConfig> detectors{DetectorConfig::csepnet_like()};
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t generation_seed = 0;
};

/// Arm "None": detector trained on the real training split. Arm "DefFiller":
/// same detector and seed trained on generated images conditioned on the
/// training masks. Both evaluated on the real test split.
ProtocolReport run_substitution(const PairSet& dataset, ImageGenerator& generator,
                                const SubstitutionSettings& settings);

struct ExpansionSettings {
  SplitSpec split{1, 5, 0};
  std::vector<DetectorConfig> detectors{DetectorConfig::csepnet_like()};
  std::vector<std::uint64_t> seeds{0};
  int added_per_category = 300;
  std::uint64_t mask_seed = 0;
  std::uint64_t generation_seed = 0;
};

/// Source of novel (mask, category) conditions for the expansion arm.
using MaskSource = std::function<std::vector<ProducedMask>(int per_category, int resolution, std::uint64_t seed)>;

MaskSource mask_source_from(MaskDDPMParams& params);

/// Arm "None": detector trained on the scarce split. Arm "DefFiller": trained
/// on the scarce split plus generated pairs for freshly produced masks.
ProtocolReport run_expansion(const PairSet& dataset, ImageGenerator& generator, const MaskSource& masks,
                             const ExpansionSettings& settings);

/// Grid raster: one row per entry, columns (mask, image). Byte-identical for
/// identical inputs.
void emit_grid(const std::vector<torch::Tensor>& images, const std::vector<torch::Tensor>& masks,
               const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Declarative experiment configuration and full-run orchestration.

struct DatasetSource {
  std::string kind = "synthetic";  // "synthetic" | "real"
  std::filesystem::path root;
  int per_category = 20;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DatasetSource dataset;
  int resolution = 64;
  int channels = 1;
  std::vector<std::string> categories = default_categories();
  AutoencoderConfig autoencoder;
  AutoencoderTrainConfig autoencoder_training;
  GeneratorConfig generator;
  GeneratorTrainConfig generator_training;
  MaskDDPMConfig mask_ddpm;
  GuidanceConfig guidance;
  std::vector<double> ablation_omegas{1.0, 3.0, 5.0, 7.0};
  SplitSpec substitution_split{9, 1, 0};
  SplitSpec expansion_split{1, 5, 0};
  int expansion_per_category = 300;
  std::vector<DetectorConfig> detectors{DetectorConfig::csepnet_like()};
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t run_seed = 0;
  int generation_batch = 32;
  std::filesystem::path output_dir = "runs/default";

  nlohmann::json to_json() const;
  /// Unknown keys anywhere in the document are errors.
  static ExperimentConfig from_json(const nlohmann::json& document);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string hash() const;
  /// Copy with shared fields propagated into the sub-configs (categories,
  /// resolution, channels, latent factor) and every stage seed derived from
  /// `run_seed` through a stage-named substream.
  ExperimentConfig resolved() const;
};

/// Small synthetic configuration that runs every stage on a CPU in minutes.
ExperimentConfig desk_config();

struct Artifact {
  std::string stage;
  std::string path;  // relative to the output directory
  std::string sha256;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  nlohmann::json config;
  std::vector<Artifact> artifacts;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& document);
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
  const Artifact* find(const std::string& path) const;
};

std::string code_version();

/// Stages of a full run, in dependency order.
enum class Stage { dataset, autoencoder, generator, mask_ddpm, ablation, substitution, expansion };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);
const std::vector<Stage>& all_stages();

/// Runs the requested stages (all by default), writing artifacts and
/// `manifest.json` into config.output_dir. Existing stage outputs from a
/// previous stage of the same run are reused when a later stage is asked for
/// on its own.
RunManifest run_experiment(const ExperimentConfig& config, const std::vector<Stage>& stages = {},
                           std::ostream* log = nullptr);

struct ReproductionCheck {
  bool identical = true;
  std::vector<std::string> mismatches;
};

/// Re-executes a manifest's config into `output_dir` and compares every
/// report artifact byte-for-byte.
ReproductionCheck reproduce(const RunManifest& manifest, const std::filesystem::path& original_dir,
                            const std::filesystem::path& output_dir, std::ostream* log = nullptr);

}  // namespace deffiller::harness
