#include "deffiller/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/hashing.hpp"
#include "deffiller/image_io.hpp"
#include "deffiller/random.hpp"

namespace fs = std::filesystem;

namespace deffiller {

const std::vector<std::string>& default_categories() {
  static const std::vector<std::string> categories{"inclusion", "patches", "scratches"};
  return categories;
}

int category_index(const std::vector<std::string>& categories, std::string_view category) {
  auto it = std::find(categories.begin(), categories.end(), category);
  require(it != categories.end(), "unknown category '{}'", category);
  return static_cast<int>(it - categories.begin());
}

std::string_view to_string(Source source) {
  switch (source) {
    case Source::real:
      return "real";
    case Source::synthetic:
      return "synthetic";
    case Source::generated:
      return "generated";
  }
  return "real";
}

Source parse_source(std::string_view text) {
  if (text == "real") return Source::real;
  if (text == "synthetic") return Source::synthetic;
  if (text == "generated") return Source::generated;
  fail("unknown pair source '{}'", text);
}

void validate_pair(const MaskImagePair& pair) {
  require(pair.image.defined() && pair.mask.defined(), "pair '{}' is missing its image or mask", pair.id);
  require(pair.image.dim() == 3 && pair.mask.dim() == 2, "pair '{}' must hold a (C,H,W) image and an (H,W) mask",
          pair.id);
  require(pair.image.size(1) == pair.mask.size(0) && pair.image.size(2) == pair.mask.size(1),
          "pair '{}' has image {}x{} but mask {}x{}", pair.id, pair.image.size(1), pair.image.size(2),
          pair.mask.size(0), pair.mask.size(1));
  require(((pair.mask == 0) | (pair.mask == 1)).all().item<bool>(), "mask of pair '{}' is not binary", pair.id);
  require(pair.image.min().item<float>() >= -1.0f && pair.image.max().item<float>() <= 1.0f,
          "image of pair '{}' leaves [-1, 1]", pair.id);
}

PairSet::PairSet(std::vector<MaskImagePair> pairs, int resolution, std::vector<std::string> categories)
    : pairs_(std::move(pairs)), resolution_(resolution), categories_(std::move(categories)) {
  for (const auto& pair : pairs_) {
    require(pair.height() == resolution_ && pair.width() == resolution_,
            "pair '{}' is {}x{}, expected {}x{}", pair.id, pair.height(), pair.width(), resolution_, resolution_);
    category_index(categories_, pair.category);
  }
}

std::size_t PairSet::count(std::string_view category) const {
  return static_cast<std::size_t>(
      std::count_if(pairs_.begin(), pairs_.end(), [&](const auto& p) { return p.category == category; }));
}

PairSet PairSet::of_category(std::string_view category) const {
  std::vector<MaskImagePair> selected;
  for (const auto& pair : pairs_) {
    if (pair.category == category) selected.push_back(pair);
  }
  return PairSet(std::move(selected), resolution_, categories_);
}

PairSet PairSet::concat(const PairSet& other) const {
  if (empty()) return other;
  if (other.empty()) return *this;
  require(resolution_ == other.resolution_, "cannot concatenate pair sets of resolution {} and {}", resolution_,
          other.resolution_);
  auto pairs = pairs_;
  pairs.insert(pairs.end(), other.pairs_.begin(), other.pairs_.end());
  return PairSet(std::move(pairs), resolution_, categories_);
}

torch::Tensor PairSet::images() const {
  require(!empty(), "empty pair set has no images");
  std::vector<torch::Tensor> images;
  images.reserve(pairs_.size());
  for (const auto& pair : pairs_) images.push_back(pair.image);
  return torch::stack(images);
}

torch::Tensor PairSet::masks() const {
  require(!empty(), "empty pair set has no masks");
  std::vector<torch::Tensor> masks;
  masks.reserve(pairs_.size());
  for (const auto& pair : pairs_) masks.push_back(pair.mask);
  return torch::stack(masks);
}

namespace {

bool is_image_extension(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".bmp" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_extension(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

PairSet load_pairs(const fs::path& root, int resolution, int channels, const std::vector<std::string>& categories) {
  require(fs::is_directory(root), "dataset root {} is not a directory", root.string());
  require(resolution > 0, "resolution must be positive");
  std::vector<MaskImagePair> pairs;
  for (const auto& category : categories) {
    const fs::path category_dir = root / category;
    if (!fs::is_directory(category_dir)) continue;
    for (const auto& image_path : sorted_files(category_dir / "images")) {
      const auto stem = image_path.stem().string();
      const fs::path mask_path = category_dir / "masks" / (stem + ".png");
      require(fs::exists(mask_path), "image '{}' in category '{}' has no mask (expected {})", stem, category,
              mask_path.string());
      auto image = image_io::read_unit(image_path, channels);
      auto mask = image_io::read_unit(mask_path, 1)[0];
      mask = (mask >= 0.5).to(torch::kFloat32);
      MaskImagePair pair;
      pair.id = category + "/" + stem;
      pair.category = category;
      pair.source = Source::real;
      pair.image = (image_io::resize_bilinear(image, resolution, resolution) * 2.0 - 1.0).clamp(-1.0, 1.0);
      pair.mask = image_io::resize_nearest(mask, resolution, resolution);
      validate_pair(pair);
      pairs.push_back(std::move(pair));
    }
  }
  require(!pairs.empty(), "no mask-image pairs found under {}", root.string());
  return PairSet(std::move(pairs), resolution, categories);
}

std::pair<PairSet, PairSet> split(const PairSet& set, const SplitSpec& spec) {
  require(spec.train_parts > 0 && spec.test_parts > 0, "split ratio parts must be positive, got {}:{}",
          spec.train_parts, spec.test_parts);
  require(!set.empty(), "cannot split an empty pair set");
  std::vector<MaskImagePair> train;
  std::vector<MaskImagePair> test;
  for (const auto& category : set.categories()) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set[i].category == category) members.push_back(i);
    }
    if (members.empty()) continue;
    auto shuffled = members;
    std::mt19937_64 rng(substream_seed(spec.seed, "split/" + category));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const double share = static_cast<double>(spec.train_parts) / (spec.train_parts + spec.test_parts);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * share));
    std::vector<std::size_t> train_idx(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test_idx(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    for (auto i : train_idx) train.push_back(set[i]);
    for (auto i : test_idx) test.push_back(set[i]);
  }
  return {PairSet(std::move(train), set.resolution(), set.categories()),
          PairSet(std::move(test), set.resolution(), set.categories())};
}

namespace {

std::string file_stem_of(const MaskImagePair& pair) {
  std::string stem = pair.id;
  std::replace(stem.begin(), stem.end(), '/', '_');
  return stem;
}

}  // namespace

void save_pairs(const PairSet& set, const fs::path& root) {
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.jsonl");
  require(static_cast<bool>(manifest), "cannot write manifest under {}", root.string());
  for (const auto& pair : set) {
    const auto stem = file_stem_of(pair);
    const fs::path image_rel = fs::path(pair.category) / "images" / (stem + ".png");
    const fs::path mask_rel = fs::path(pair.category) / "masks" / (stem + ".png");
    image_io::write_image(root / image_rel, pair.image);
    image_io::write_mask(root / mask_rel, pair.mask);
    nlohmann::json record{{"id", pair.id},
                          {"category", pair.category},
                          {"source", std::string(to_string(pair.source))},
                          {"image", image_rel.generic_string()},
                          {"mask", mask_rel.generic_string()},
                          {"sha256", sha256_hex(sha256_file(root / image_rel) + sha256_file(root / mask_rel))}};
    manifest << record.dump() << '\n';
  }
}

std::vector<ManifestRecord> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  require(static_cast<bool>(in), "cannot read manifest {}", manifest.string());
  std::vector<ManifestRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto doc = nlohmann::json::parse(line);
    ManifestRecord record;
    record.id = doc.at("id").get<std::string>();
    record.category = doc.at("category").get<std::string>();
    record.source = parse_source(doc.at("source").get<std::string>());
    record.image_path = doc.at("image").get<std::string>();
    record.mask_path = doc.at("mask").get<std::string>();
    record.checksum = doc.at("sha256").get<std::string>();
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace deffiller
