#include <algorithm>

#include <fmt/format.h>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/features.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/hashing.hpp"
#include "deffiller/random.hpp"

namespace deffiller::harness {

DiffusionGenerator::DiffusionGenerator(GeneratorState& state, GuidanceConfig guidance, int batch_size)
    : state_(&state), guidance_(std::move(guidance)), batch_size_(batch_size) {
  require(batch_size > 0, "generation batch size must be positive");
}

std::vector<torch::Tensor> DiffusionGenerator::generate(const std::vector<MaskImagePair>& conditions,
                                                        std::uint64_t seed) {
  std::vector<torch::Tensor> images;
  images.reserve(conditions.size());
  for (std::size_t start = 0, chunk = 0; start < conditions.size(); start += static_cast<std::size_t>(batch_size_), ++chunk) {
    const auto end = std::min(conditions.size(), start + static_cast<std::size_t>(batch_size_));
    std::vector<torch::Tensor> masks;
    std::vector<std::string> categories;
    for (auto i = start; i < end; ++i) {
      masks.push_back(conditions[i].mask);
      categories.push_back(conditions[i].category);
    }
    auto guidance = guidance_;
    guidance.seed = substream_seed(seed, fmt::format("generate/chunk{}", chunk));
    torch::Tensor batch;
    try {
      batch = sample(*state_, torch::stack(masks), categories, guidance);
    } catch (const std::exception& e) {
      fail("generation failed for mask '{}': {}", conditions[start].id, e.what());
    }
    for (std::int64_t k = 0; k < batch.size(0); ++k) images.push_back(batch[k]);
  }
  return images;
}

std::vector<torch::Tensor> RealImageOracle::generate(const std::vector<MaskImagePair>& conditions, std::uint64_t) {
  std::vector<torch::Tensor> images;
  images.reserve(conditions.size());
  for (const auto& c : conditions) images.push_back(c.image);
  return images;
}

PairSet generate_pairs(ImageGenerator& generator, const PairSet& conditions, std::uint64_t seed) {
  if (conditions.empty()) return PairSet({}, conditions.resolution(), conditions.categories());
  const auto images = generator.generate(conditions.pairs(), seed);
  require(images.size() == conditions.size(), "generator '{}' returned {} images for {} masks", generator.id(),
          images.size(), conditions.size());
  std::vector<MaskImagePair> pairs;
  pairs.reserve(conditions.size());
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    MaskImagePair pair = conditions[i];
    pair.id = conditions[i].id + "#" + generator.id();
    pair.source = Source::generated;
    pair.image = images[i];
    require(pair.image.defined() && pair.image.sizes() == conditions[i].image.sizes(),
            "generator '{}' returned a wrongly shaped image for mask '{}'", generator.id(), conditions[i].id);
    pairs.push_back(std::move(pair));
  }
  return PairSet(std::move(pairs), conditions.resolution(), conditions.categories());
}

namespace {

std::vector<double> per_category_fid(const AutoencoderParams& extractor, const PairSet& real, const PairSet& generated,
                                     const std::vector<std::string>& categories) {
  std::vector<double> values;
  for (const auto& category : categories) {
    const auto r = real.of_category(category);
    const auto g = generated.of_category(category);
    require(r.size() >= 2 && g.size() >= 2, "FID for '{}' needs at least 2 real and 2 generated images ({} / {})",
            category, r.size(), g.size());
    values.push_back(
        metrics::fid(extract_features(extractor, r.images()), extract_features(extractor, g.images())));
  }
  return values;
}

std::vector<std::string> present_categories(const PairSet& set) {
  std::vector<std::string> present;
  for (const auto& c : set.categories()) {
    if (set.count(c) > 0) present.push_back(c);
  }
  return present;
}

std::string split_id(const SplitSpec& split) {
  return fmt::format("{}:{}@{}", split.train_parts, split.test_parts, split.seed);
}

std::vector<ProtocolRow> run_arms(const std::string& baseline_arm, const PairSet& baseline_train,
                                  const std::string& treated_arm, const PairSet& treated_train, const PairSet& test,
                                  const std::vector<DetectorConfig>& detectors,
                                  const std::vector<std::uint64_t>& seeds, const SplitSpec& split) {
  require(!seeds.empty(), "protocol needs at least one seed");
  require(!detectors.empty(), "protocol needs at least one detector config");
  std::vector<ProtocolRow> rows;
  for (const auto& detector : detectors) {
    for (auto seed : seeds) {
      for (const auto* arm : {&baseline_arm, &treated_arm}) {
        const auto& train = arm == &baseline_arm ? baseline_train : treated_train;
        const auto params = train_detector(train, detector, seed);
        ProtocolRow row{detector.name, *arm, seed, evaluate_detector(params, test)};
        row.report.provenance = {seed, split_id(split), short_hash(detector.to_json().dump())};
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace

FidTable ablate_guidance_scale(GeneratorState& state, const PairSet& reference, const std::vector<double>& omegas,
                               const GuidanceConfig& base, int batch_size) {
  require(!omegas.empty(), "guidance sweep needs at least one scale");
  require(!reference.empty(), "guidance sweep needs a reference set");
  FidTable table;
  table.row_header = "omega";
  table.categories = present_categories(reference);
  table.extractor_id = extractor_id(state.autoencoder);
  for (double omega : omegas) {
    require(omega >= 0.0, "guidance scale must be nonnegative, got {}", omega);
    auto guidance = base;
    guidance.omega = omega;
    guidance.per_category_omega.clear();
    DiffusionGenerator generator(state, guidance, batch_size);
    const auto generated = generate_pairs(generator, reference, base.seed);
    table.add_row(fmt::format("{:g}", omega), per_category_fid(state.autoencoder, reference, generated, table.categories));
  }
  return table;
}

FidTable eval_generation_quality(const AutoencoderParams& extractor, const PairSet& real, const PairSet& generated,
                                 const std::string& label) {
  FidTable table;
  table.row_header = "method";
  table.categories = present_categories(real);
  table.extractor_id = extractor_id(extractor);
  table.add_row(label, per_category_fid(extractor, real, generated, table.categories));
  return table;
}

ProtocolReport run_substitution(const PairSet& dataset, ImageGenerator& generator,
                                const SubstitutionSettings& settings) {
  const auto [train, test] = split(dataset, settings.split);
  require(!train.empty() && !test.empty(), "substitution split left an empty side ({} train, {} test)", train.size(),
          test.size());
  const auto generated = generate_pairs(generator, train, settings.generation_seed);
  ProtocolReport report;
  report.protocol = "substitution";
  report.arms = {"None", "DefFiller"};
  report.train_pairs = static_cast<int>(train.size());
  report.test_pairs = static_cast<int>(test.size());
  report.added_pairs = 0;
  report.rows = run_arms("None", train, "DefFiller", generated, test, settings.detectors, settings.seeds,
                         settings.split);
  return report;
}

MaskSource mask_source_from(MaskDDPMParams& params) {
  return [&params](int per_category, int resolution, std::uint64_t seed) {
    return produce_masks(params, per_category, resolution, seed);
  };
}

ProtocolReport run_expansion(const PairSet& dataset, ImageGenerator& generator, const MaskSource& masks,
                             const ExpansionSettings& settings) {
  require(settings.added_per_category >= 0, "expansion count must be nonnegative");
  const auto [scarce, test] = split(dataset, settings.split);
  require(!scarce.empty() && !test.empty(), "expansion split left an empty side ({} train, {} test)", scarce.size(),
          test.size());
  const auto produced = masks(settings.added_per_category, dataset.resolution(), settings.mask_seed);
  std::vector<MaskImagePair> conditions;
  conditions.reserve(produced.size());
  const int channels = scarce[0].channels();
  for (const auto& m : produced) {
    MaskImagePair pair;
    pair.id = fmt::format("{}/produced_{:04d}", m.category, m.index);
    pair.category = m.category;
    pair.source = Source::generated;
    pair.mask = m.mask;
    pair.image = torch::zeros({channels, m.mask.size(0), m.mask.size(1)});
    conditions.push_back(std::move(pair));
  }
  const PairSet condition_set(std::move(conditions), dataset.resolution(), dataset.categories());
  const auto generated = generate_pairs(generator, condition_set, settings.generation_seed);
  const auto expanded = scarce.concat(generated);

  ProtocolReport report;
  report.protocol = "expansion";
  report.arms = {"None", "DefFiller"};
  report.train_pairs = static_cast<int>(scarce.size());
  report.test_pairs = static_cast<int>(test.size());
  report.added_pairs = static_cast<int>(generated.size());
  report.rows = run_arms("None", scarce, "DefFiller", expanded, test, settings.detectors, settings.seeds,
                         settings.split);
  return report;
}

}  // namespace deffiller::harness
