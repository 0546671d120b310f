#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/types.h>

namespace deffiller {

/// Defect classes of the steel-surface datasets, in canonical order. The
/// index of a name in this list is the class index used by the conditioning
/// module (background takes index 0 of the expanded map, so class i maps to
/// channel i + 1).
const std::vector<std::string>& default_categories();

/// Index of `category` within `categories`; throws for unknown names.
int category_index(const std::vector<std::string>& categories, std::string_view category);

enum class Source { real, synthetic, generated };

std::string_view to_string(Source source);
Source parse_source(std::string_view text);

/// A defect image with its binary saliency mask.
///
/// image: (C, H, W) float in [-1, 1]; mask: (H, W) float with values in {0, 1}.
struct MaskImagePair {
  std::string id;
  std::string category;
  Source source = Source::real;
  torch::Tensor image;
  torch::Tensor mask;

  int height() const { return static_cast<int>(mask.size(0)); }
  int width() const { return static_cast<int>(mask.size(1)); }
  int channels() const { return static_cast<int>(image.size(0)); }
};

/// Throws unless the pair satisfies the shape, range, and binarity invariants.
void validate_pair(const MaskImagePair& pair);

/// Ordered, immutable collection of pairs sharing one square resolution.
class PairSet {
 public:
  PairSet() = default;
  PairSet(std::vector<MaskImagePair> pairs, int resolution,
          std::vector<std::string> categories = default_categories());

  int resolution() const { return resolution_; }
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const MaskImagePair& operator[](std::size_t i) const { return pairs_[i]; }
  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }
  const std::vector<MaskImagePair>& pairs() const { return pairs_; }

  std::size_t count(std::string_view category) const;
  PairSet of_category(std::string_view category) const;
  /// Pairs of `this` followed by pairs of `other`; resolutions must match.
  PairSet concat(const PairSet& other) const;

  /// (N, C, H, W) stacked images and (N, H, W) stacked masks.
  torch::Tensor images() const;
  torch::Tensor masks() const;

 private:
  std::vector<MaskImagePair> pairs_;
  int resolution_ = 0;
  std::vector<std::string> categories_;
};

/// Train/test ratio in parts, e.g. {9, 1} or {1, 5}.
struct SplitSpec {
  int train_parts = 9;
  int test_parts = 1;
  std::uint64_t seed = 0;
};

/// Loads `<root>/<category>/images/*.{png,bmp,jpg,jpeg}` paired by stem with
/// `<root>/<category>/masks/<stem>.png`. Masks are binarized at 0.5 and
/// resized nearest-neighbour; images are resized bilinearly and scaled to
/// [-1, 1].
PairSet load_pairs(const std::filesystem::path& root, int resolution, int channels = 1,
                   const std::vector<std::string>& categories = default_categories());

/// Procedural stand-in defect on a streaked steel-like background. Pure in
/// (seed, category, resolution). The mask is exactly the set of pixels that
/// differ from the background rendering.
MaskImagePair synth_pair(std::uint64_t seed, std::string_view category, int resolution);

/// Allowed mask-area fraction for synthesized defects.
inline constexpr double kSynthMinArea = 0.005;
inline constexpr double kSynthMaxArea = 0.20;

/// `per_category` synthetic pairs for every category.
PairSet synth_dataset(int per_category, std::uint64_t seed, int resolution,
                      const std::vector<std::string>& categories = default_categories());

/// Stratified, seeded partition. Per category, the train share is
/// round(n * train / (train + test)).
std::pair<PairSet, PairSet> split(const PairSet& set, const SplitSpec& spec);

/// Writes the pairs under the load_pairs layout plus `manifest.jsonl`
/// (one record per pair: id, category, source, image, mask, sha256).
void save_pairs(const PairSet& set, const std::filesystem::path& root);

struct ManifestRecord {
  std::string id;
  std::string category;
  Source source = Source::real;
  std::string image_path;
  std::string mask_path;
  std::string checksum;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);

}  // namespace deffiller
