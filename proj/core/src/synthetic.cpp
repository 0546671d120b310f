#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "deffiller/datasets.hpp"
#include "deffiller/error.hpp"
#include "deffiller/random.hpp"

namespace deffiller {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

class Canvas {
 public:
  explicit Canvas(int resolution)
      : resolution_(resolution),
        background_(static_cast<std::size_t>(resolution) * resolution, 0.0),
        delta_(background_.size(), 0.0),
        mask_(background_.size(), 0) {}

  int resolution() const { return resolution_; }
  double& background(int y, int x) { return background_[index(y, x)]; }

  /// Marks a defect pixel with intensity offset `delta` (|delta| > 0). Later
  /// strokes overwrite earlier ones.
  void paint(int y, int x, double delta) {
    if (y < 0 || x < 0 || y >= resolution_ || x >= resolution_) return;
    delta_[index(y, x)] = delta;
    mask_[index(y, x)] = 1;
  }

  double area_fraction() const {
    return static_cast<double>(std::count(mask_.begin(), mask_.end(), 1)) / static_cast<double>(mask_.size());
  }

  MaskImagePair finish(std::string_view category, std::uint64_t seed) const {
    auto image = torch::empty({1, resolution_, resolution_}, torch::kFloat32);
    auto mask = torch::empty({resolution_, resolution_}, torch::kFloat32);
    auto image_acc = image.accessor<float, 3>();
    auto mask_acc = mask.accessor<float, 2>();
    for (int y = 0; y < resolution_; ++y) {
      for (int x = 0; x < resolution_; ++x) {
        const auto i = index(y, x);
        const double value = std::clamp(background_[i] + (mask_[i] ? delta_[i] : 0.0), -1.0, 1.0);
        image_acc[0][y][x] = static_cast<float>(value);
        mask_acc[y][x] = mask_[i] ? 1.0f : 0.0f;
      }
    }
    MaskImagePair pair;
    pair.id = std::string(category) + "_" + std::to_string(seed);
    pair.category = std::string(category);
    pair.source = Source::synthetic;
    pair.image = image;
    pair.mask = mask;
    return pair;
  }

 private:
  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * resolution_ + x; }

  int resolution_;
  std::vector<double> background_;
  std::vector<double> delta_;
  std::vector<std::uint8_t> mask_;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Horizontal rolling streaks bent by a weak cross-wise undulation. The bend
// acts on the phase, so values keep a single sinusoid's spread and stay well
// inside [-0.4, 0.3] where defect offsets never clip.
void render_background(Canvas& canvas, std::mt19937_64& rng) {
  const int r = canvas.resolution();
  const double base = uniform(rng, -0.25, 0.10);
  const double amplitude = uniform(rng, 0.03, 0.06);
  const double frequency = uniform(rng, 2.0, 6.0);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double bend = uniform(rng, 0.3, 1.2);
  const double bend_frequency = uniform(rng, 1.0, 3.0);
  const double bend_phase = uniform(rng, 0.0, kTwoPi);
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      const double u = (x + 0.5) / r;
      const double v = (y + 0.5) / r;
      const double wave = kTwoPi * frequency * v + phase + bend * std::sin(kTwoPi * bend_frequency * u + bend_phase);
      canvas.background(y, x) = base + amplitude * std::sin(wave);
    }
  }
}

// Small dark elongated blob with a wobbling rim, darker at the core.
void render_inclusion(Canvas& canvas, std::mt19937_64& rng) {
  const int r = canvas.resolution();
  const double cx = uniform(rng, 0.2, 0.8) * r;
  const double cy = uniform(rng, 0.2, 0.8) * r;
  const double major = uniform(rng, 0.08, 0.22) * r;
  const double minor = std::max(uniform(rng, 0.025, 0.05) * r, 0.75);
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double wobble = uniform(rng, 0.0, 0.15);
  const int lobes = uniform_int(rng, 2, 5);
  const double phase = uniform(rng, 0.0, kTwoPi);
  const double strength = uniform(rng, 0.35, 0.6);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double along = (c * dx + s * dy) / major;
      const double across = (-s * dx + c * dy) / minor;
      const double rho = std::sqrt(along * along + across * across);
      const double theta = std::atan2(across, along);
      const double rim = 1.0 + wobble * std::sin(lobes * theta + phase);
      if (rho <= rim) {
        canvas.paint(y, x, -strength * (0.7 + 0.3 * (1.0 - rho / rim)));
      }
    }
  }
}

// Broad irregular region built from overlapping ellipses with one common
// brightness shift.
void render_patches(Canvas& canvas, std::mt19937_64& rng) {
  const int r = canvas.resolution();
  const double cx = uniform(rng, 0.3, 0.7) * r;
  const double cy = uniform(rng, 0.3, 0.7) * r;
  const int blobs = uniform_int(rng, 3, 5);
  const double sign = uniform(rng, 0.0, 1.0) < 0.7 ? -1.0 : 1.0;
  const double strength = sign * uniform(rng, 0.3, 0.5);
  for (int b = 0; b < blobs; ++b) {
    const double bx = cx + uniform(rng, -0.15, 0.15) * r;
    const double by = cy + uniform(rng, -0.15, 0.15) * r;
    const double rx = uniform(rng, 0.05, 0.13) * r;
    const double ry = uniform(rng, 0.05, 0.13) * r;
    for (int y = 0; y < r; ++y) {
      for (int x = 0; x < r; ++x) {
        const double dx = (x + 0.5 - bx) / rx;
        const double dy = (y + 0.5 - by) / ry;
        if (dx * dx + dy * dy <= 1.0) {
          const double shade = 0.85 + 0.15 * std::cos(kTwoPi * (x + y) / (0.6 * r));
          canvas.paint(y, x, strength * shade);
        }
      }
    }
  }
}

// One or two thin quadratic Bezier strokes.
void render_scratches(Canvas& canvas, std::mt19937_64& rng) {
  const int r = canvas.resolution();
  const int strokes = uniform_int(rng, 1, 2);
  const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  const double strength = sign * uniform(rng, 0.35, 0.6);
  const double half_width = std::max(0.5, uniform(rng, 0.5, 1.0) * r / 64.0);
  for (int k = 0; k < strokes; ++k) {
    const double x0 = uniform(rng, 0.1, 0.9) * r, y0 = uniform(rng, 0.1, 0.9) * r;
    const double x2 = uniform(rng, 0.1, 0.9) * r, y2 = uniform(rng, 0.1, 0.9) * r;
    const double x1 = 0.5 * (x0 + x2) + uniform(rng, -0.25, 0.25) * r;
    const double y1 = 0.5 * (y0 + y2) + uniform(rng, -0.25, 0.25) * r;
    const int samples = 8 * r;
    for (int i = 0; i <= samples; ++i) {
      const double t = static_cast<double>(i) / samples;
      const double px = (1 - t) * (1 - t) * x0 + 2 * (1 - t) * t * x1 + t * t * x2;
      const double py = (1 - t) * (1 - t) * y0 + 2 * (1 - t) * t * y1 + t * t * y2;
      const int reach = static_cast<int>(std::ceil(half_width)) + 1;
      for (int y = static_cast<int>(py) - reach; y <= static_cast<int>(py) + reach; ++y) {
        for (int x = static_cast<int>(px) - reach; x <= static_cast<int>(px) + reach; ++x) {
          const double dx = x + 0.5 - px;
          const double dy = y + 0.5 - py;
          if (dx * dx + dy * dy <= half_width * half_width) canvas.paint(y, x, strength);
        }
      }
    }
  }
}

}  // namespace

MaskImagePair synth_pair(std::uint64_t seed, std::string_view category, int resolution) {
  require(resolution >= 16, "synthetic resolution must be at least 16, got {}", resolution);
  using Renderer = void (*)(Canvas&, std::mt19937_64&);
  Renderer renderer = nullptr;
  if (category == "inclusion") {
    renderer = &render_inclusion;
  } else if (category == "patches") {
    renderer = &render_patches;
  } else if (category == "scratches") {
    renderer = &render_scratches;
  } else {
    fail("no synthetic renderer for category '{}'", category);
  }

  std::mt19937_64 rng(substream_seed(seed, "synth/" + std::string(category)));
  for (int attempt = 0; attempt < 200; ++attempt) {
    Canvas canvas(resolution);
    render_background(canvas, rng);
    renderer(canvas, rng);
    const double area = canvas.area_fraction();
    if (area >= kSynthMinArea && area <= kSynthMaxArea) return canvas.finish(category, seed);
  }
  fail("could not synthesize a '{}' defect within the area band at resolution {}", category, resolution);
}

PairSet synth_dataset(int per_category, std::uint64_t seed, int resolution,
                      const std::vector<std::string>& categories) {
  require(per_category > 0, "per_category must be positive");
  std::vector<MaskImagePair> pairs;
  for (const auto& category : categories) {
    for (int i = 0; i < per_category; ++i) {
      const std::uint64_t pair_seed = seed * 1'000'003ULL + static_cast<std::uint64_t>(i);
      auto pair = synth_pair(pair_seed, category, resolution);
      pair.id = category + "_" + std::to_string(i);
      pairs.push_back(std::move(pair));
    }
  }
  return PairSet(std::move(pairs), resolution, categories);
}

}  // namespace deffiller
