#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "deffiller/error.hpp"
#include "deffiller/metrics.hpp"

namespace deffiller::metrics {

namespace {

// Machine epsilon of the reference implementations' arithmetic.
constexpr double kEps = std::numeric_limits<double>::epsilon();

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double object_score(const std::vector<double>& values) {
  const double x = mean_of(values);
  const double sigma = std_of(values);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double s_object(const SaliencyEval& eval) {
  const auto pred = eval.prediction();
  const auto gt = eval.ground_truth();
  std::vector<double> fg;
  std::vector<double> bg;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i]) {
      fg.push_back(pred[i]);
    } else {
      bg.push_back(1.0 - pred[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(pred.size());
  return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// Region SSIM of one rectangular block [r0, r1) x [c0, c1).
double block_ssim(const SaliencyEval& eval, int r0, int r1, int c0, int c1) {
  const int n = (r1 - r0) * (c1 - c0);
  if (n <= 0) return 0.0;
  const auto pred = eval.prediction();
  const auto gt = eval.ground_truth();
  const int w = eval.width();
  double sx = 0.0;
  double sy = 0.0;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      sx += pred[static_cast<std::size_t>(r) * w + c];
      sy += gt[static_cast<std::size_t>(r) * w + c];
    }
  }
  const double x = sx / n;
  const double y = sy / n;
  double vx = 0.0;
  double vy = 0.0;
  double cxy = 0.0;
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      const double dx = pred[static_cast<std::size_t>(r) * w + c] - x;
      const double dy = gt[static_cast<std::size_t>(r) * w + c] - y;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double denom = n - 1 + kEps;
  vx /= denom;
  vy /= denom;
  cxy /= denom;
  const double a = 4.0 * x * y * cxy;
  const double b = (x * x + y * y) * (vx + vy);
  if (a != 0.0) return a / (b + kEps);
  if (b == 0.0) return 1.0;
  return 0.0;
}

double s_region(const SaliencyEval& eval) {
  const int h = eval.height();
  const int w = eval.width();
  const auto gt = eval.ground_truth();
  // Centroid in 1-based coordinates, rounded half away from zero.
  long cx = 0;
  long cy = 0;
  const auto total = eval.foreground_count();
  if (total == 0) {
    cx = std::lround(w / 2.0);
    cy = std::lround(h / 2.0);
  } else {
    double sum_c = 0.0;
    double sum_r = 0.0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (gt[static_cast<std::size_t>(r) * w + c]) {
          sum_c += c + 1;
          sum_r += r + 1;
        }
      }
    }
    cx = std::lround(sum_c / static_cast<double>(total));
    cy = std::lround(sum_r / static_cast<double>(total));
  }
  const int x = static_cast<int>(cx);
  const int y = static_cast<int>(cy);
  const double area = static_cast<double>(w) * h;
  const double w1 = static_cast<double>(x) * y / area;
  const double w2 = static_cast<double>(w - x) * y / area;
  const double w3 = static_cast<double>(x) * (h - y) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * block_ssim(eval, 0, y, 0, x) + w2 * block_ssim(eval, 0, y, x, w) +
         w3 * block_ssim(eval, y, h, 0, x) + w4 * block_ssim(eval, y, h, x, w);
}

void check_thresholds(std::span<const double> thresholds) {
  require(!thresholds.empty(), "threshold sweep needs at least one threshold");
}

}  // namespace

SaliencyEval::SaliencyEval(std::vector<double> prediction, std::vector<std::uint8_t> ground_truth, int height,
                           int width)
    : prediction_(std::move(prediction)), ground_truth_(std::move(ground_truth)), height_(height), width_(width) {
  require(height > 0 && width > 0, "saliency maps need a positive size");
  const auto n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  require(prediction_.size() == n && ground_truth_.size() == n,
          "prediction ({}) and ground truth ({}) must both hold {}x{} values", prediction_.size(),
          ground_truth_.size(), height, width);
  for (auto& p : prediction_) {
    require(std::isfinite(p), "prediction holds a non-finite value");
    p = std::clamp(p, 0.0, 1.0);
  }
  for (auto g : ground_truth_) require(g <= 1, "ground truth must be binary");
}

SaliencyEval::SaliencyEval(std::span<const float> prediction, std::span<const float> ground_truth, int height,
                           int width)
    : SaliencyEval(std::vector<double>(prediction.begin(), prediction.end()),
                   [&] {
                     std::vector<std::uint8_t> gt;
                     gt.reserve(ground_truth.size());
                     for (float g : ground_truth) {
                       require(g == 0.0f || g == 1.0f, "ground truth must be binary, got {}", g);
                       gt.push_back(g == 1.0f ? 1 : 0);
                     }
                     return gt;
                   }(),
                   height, width) {}

std::size_t SaliencyEval::foreground_count() const {
  return static_cast<std::size_t>(std::count(ground_truth_.begin(), ground_truth_.end(), std::uint8_t{1}));
}

std::vector<double> default_thresholds() {
  std::vector<double> thresholds(kThresholdCount);
  for (int k = 0; k < kThresholdCount; ++k) thresholds[static_cast<std::size_t>(k)] = k / 256.0;
  return thresholds;
}

double mae(const SaliencyEval& eval) {
  const auto pred = eval.prediction();
  const auto gt = eval.ground_truth();
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - gt[i]);
  return total / static_cast<double>(pred.size());
}

double f_measure_max(const SaliencyEval& eval, double beta_squared) {
  return f_measure_max(eval, beta_squared, default_thresholds());
}

double f_measure_max(const SaliencyEval& eval, double beta_squared, std::span<const double> thresholds) {
  require(beta_squared > 0.0, "beta^2 must be positive");
  check_thresholds(thresholds);
  const auto positives = eval.foreground_count();
  require(positives > 0, "F-measure is undefined for an all-zero ground truth");
  const auto pred = eval.prediction();
  const auto gt = eval.ground_truth();
  double best = 0.0;
  for (double tau : thresholds) {
    std::size_t predicted = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] > tau) {
        ++predicted;
        hits += gt[i];
      }
    }
    if (hits == 0) continue;
    const double precision = static_cast<double>(hits) / static_cast<double>(predicted);
    const double recall = static_cast<double>(hits) / static_cast<double>(positives);
    best = std::max(best, (1.0 + beta_squared) * precision * recall / (beta_squared * precision + recall));
  }
  return best;
}

double s_measure(const SaliencyEval& eval, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  const double fg_share = static_cast<double>(eval.foreground_count()) / static_cast<double>(eval.size());
  const auto pred = eval.prediction();
  const double pred_mean = std::accumulate(pred.begin(), pred.end(), 0.0) / static_cast<double>(pred.size());
  if (fg_share == 0.0) return 1.0 - pred_mean;
  if (fg_share == 1.0) return pred_mean;
  return std::max(0.0, alpha * s_object(eval) + (1.0 - alpha) * s_region(eval));
}

double e_measure(std::span<const std::uint8_t> binary_prediction, std::span<const std::uint8_t> ground_truth) {
  require(binary_prediction.size() == ground_truth.size() && !ground_truth.empty(),
          "E-measure needs equally sized, nonempty maps");
  const auto n = ground_truth.size();
  const auto positives = static_cast<std::size_t>(std::count(ground_truth.begin(), ground_truth.end(), 1));
  double total = 0.0;
  if (positives == 0) {
    // Empty ground truth: the score is the share of pixels predicted empty.
    for (auto p : binary_prediction) total += 1.0 - p;
  } else if (positives == n) {
    for (auto p : binary_prediction) total += p;
  } else {
    const double mu_p =
        static_cast<double>(std::count(binary_prediction.begin(), binary_prediction.end(), 1)) / static_cast<double>(n);
    const double mu_g = static_cast<double>(positives) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = binary_prediction[i] - mu_p;
      const double b = ground_truth[i] - mu_g;
      const double align = 2.0 * a * b / (a * a + b * b + kEps);
      total += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return total / static_cast<double>(n);
}

double e_measure_max(const SaliencyEval& eval) { return e_measure_max(eval, default_thresholds()); }

double e_measure_max(const SaliencyEval& eval, std::span<const double> thresholds) {
  check_thresholds(thresholds);
  const auto pred = eval.prediction();
  std::vector<std::uint8_t> binary(pred.size());
  double best = 0.0;
  for (double tau : thresholds) {
    for (std::size_t i = 0; i < pred.size(); ++i) binary[i] = pred[i] > tau ? 1 : 0;
    best = std::max(best, e_measure(binary, eval.ground_truth()));
  }
  return best;
}

void SaliencyAccumulator::add(const SaliencyEval& eval) {
  s_sum_ += s_measure(eval);
  mae_sum_ += mae(eval);
  e_sum_ += e_measure_max(eval);
  ++count_;
  if (eval.foreground_count() == 0) {
    ++f_excluded_;
  } else {
    f_sum_ += f_measure_max(eval);
    ++f_count_;
  }
}

SaliencyScores SaliencyAccumulator::scores() const {
  SaliencyScores s;
  s.count = count_;
  s.f_excluded = f_excluded_;
  if (count_ > 0) {
    s.s_alpha = s_sum_ / count_;
    s.mae = mae_sum_ / count_;
    s.e_max = e_sum_ / count_;
  }
  if (f_count_ > 0) s.f_max = f_sum_ / f_count_;
  return s;
}

}  // namespace deffiller::metrics
