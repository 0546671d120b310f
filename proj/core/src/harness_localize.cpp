#include <algorithm>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/harness.hpp"
#include "deffiller/image_io.hpp"

namespace deffiller::harness {

namespace {

constexpr double kMadFloor = 1e-3;
constexpr double kMadMultiple = 2.0;
constexpr double kComponentShare = 0.2;

// Lower median; `values` is reordered.
double median_of(std::vector<double>& values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

torch::Tensor binary_of(const torch::Tensor& map) { return map.to(torch::kFloat32) > 0.5; }

}  // namespace

torch::Tensor localize_defect(const torch::Tensor& image) {
  require(image.dim() == 3, "localize_defect expects a (C, H, W) image");
  const auto gray = image.to(torch::kFloat64).mean(0).contiguous();
  const int h = static_cast<int>(gray.size(0));
  const int w = static_cast<int>(gray.size(1));
  std::vector<double> values(gray.data_ptr<double>(), gray.data_ptr<double>() + gray.numel());
  auto scratch = values;
  const double center = median_of(scratch);
  std::vector<double> deviation(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) deviation[i] = std::abs(values[i] - center);
  scratch = deviation;
  const double mad = std::max(median_of(scratch), kMadFloor);

  cv::Mat outliers(h, w, CV_8UC1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      outliers.at<std::uint8_t>(r, c) = deviation[static_cast<std::size_t>(r) * w + c] > kMadMultiple * mad ? 1 : 0;
    }
  }
  cv::Mat labels;
  cv::Mat stats;
  cv::Mat centroids;
  const int count = cv::connectedComponentsWithStats(outliers, labels, stats, centroids, 8, CV_32S);
  int largest = 0;
  for (int k = 1; k < count; ++k) largest = std::max(largest, stats.at<int>(k, cv::CC_STAT_AREA));
  std::vector<bool> keep(static_cast<std::size_t>(count), false);
  for (int k = 1; k < count; ++k) {
    keep[static_cast<std::size_t>(k)] = stats.at<int>(k, cv::CC_STAT_AREA) >= kComponentShare * largest;
  }
  auto located = torch::zeros({h, w}, torch::kFloat32);
  auto acc = located.accessor<float, 2>();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (keep[static_cast<std::size_t>(labels.at<int>(r, c))]) acc[r][c] = 1.0f;
    }
  }
  return located;
}

double mask_iou(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.sizes() == b.sizes(), "IoU needs maps of equal shape");
  const auto ba = binary_of(a);
  const auto bb = binary_of(b);
  const auto uni = (ba | bb).sum().item<std::int64_t>();
  if (uni == 0) return 1.0;
  return static_cast<double>((ba & bb).sum().item<std::int64_t>()) / static_cast<double>(uni);
}

double nearest_iou(const torch::Tensor& mask, const torch::Tensor& references) {
  require(references.dim() == 3 && references.size(0) > 0, "nearest_iou needs a nonempty (N, H, W) reference set");
  double best = 0.0;
  for (std::int64_t i = 0; i < references.size(0); ++i) best = std::max(best, mask_iou(mask, references[i]));
  return best;
}

void emit_grid(const std::vector<torch::Tensor>& images, const std::vector<torch::Tensor>& masks,
               const std::filesystem::path& path) {
  require(!images.empty(), "grid needs at least one image");
  require(images.size() == masks.size(), "grid got {} images but {} masks", images.size(), masks.size());
  std::vector<torch::Tensor> rows;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& image = images[i];
    const auto& mask = masks[i];
    require(image.dim() == 3 && mask.dim() == 2 && image.size(1) == mask.size(0) && image.size(2) == mask.size(1),
            "grid entry {} has mismatched image and mask shapes", i);
    auto image_u8 = ((image.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5).round();
    auto mask_u8 = (mask.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().unsqueeze(0).expand_as(image_u8);
    rows.push_back(torch::cat({mask_u8, image_u8}, 2));
  }
  image_io::write_u8(path, torch::cat(rows, 1));
}

}  // namespace deffiller::harness
