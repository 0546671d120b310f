#include "deffiller/image_io.hpp"

#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "deffiller/error.hpp"

namespace deffiller::image_io {

namespace {

cv::Mat plane_to_mat(const torch::Tensor& plane) {
  auto contiguous = plane.to(torch::kFloat32).contiguous();
  cv::Mat view(static_cast<int>(contiguous.size(0)), static_cast<int>(contiguous.size(1)), CV_32FC1,
               contiguous.data_ptr<float>());
  return view.clone();
}

torch::Tensor mat_to_plane(const cv::Mat& mat) {
  cv::Mat as_float;
  mat.convertTo(as_float, CV_32FC1);
  return torch::from_blob(as_float.data, {as_float.rows, as_float.cols}, torch::kFloat32).clone();
}

cv::Mat to_u8_mat(const torch::Tensor& u8_chw) {
  auto hwc = u8_chw.permute({1, 2, 0}).contiguous().to(torch::kUInt8);
  const int channels = static_cast<int>(hwc.size(2));
  cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC(channels),
              hwc.data_ptr<std::uint8_t>());
  cv::Mat out = mat.clone();
  if (channels == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  return out;
}

}  // namespace

torch::Tensor read_unit(const std::filesystem::path& path, int channels) {
  require(channels == 1 || channels == 3, "unsupported channel count {}", channels);
  cv::Mat raw = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  require(!raw.empty(), "cannot read image file {}", path.string());
  if (channels == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2RGB);
  std::vector<cv::Mat> planes;
  cv::split(raw, planes);
  std::vector<torch::Tensor> tensors;
  for (const auto& plane : planes) tensors.push_back(mat_to_plane(plane) / 255.0);
  return torch::stack(tensors);
}

torch::Tensor resize_bilinear(const torch::Tensor& image, int height, int width) {
  require(image.dim() == 3, "resize_bilinear expects (C, H, W)");
  if (image.size(1) == height && image.size(2) == width) return image.clone();
  std::vector<torch::Tensor> planes;
  for (std::int64_t c = 0; c < image.size(0); ++c) {
    cv::Mat resized;
    cv::resize(plane_to_mat(image[c]), resized, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    planes.push_back(mat_to_plane(resized));
  }
  return torch::stack(planes);
}

torch::Tensor resize_nearest(const torch::Tensor& map, int height, int width) {
  require(map.dim() == 2, "resize_nearest expects (H, W)");
  if (map.size(0) == height && map.size(1) == width) return map.clone();
  cv::Mat resized;
  cv::resize(plane_to_mat(map), resized, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
  return mat_to_plane(resized);
}

void write_u8(const std::filesystem::path& path, const torch::Tensor& image) {
  require(image.dim() == 3, "write_u8 expects (C, H, W)");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  require(cv::imwrite(path.string(), to_u8_mat(image), params), "cannot write {}", path.string());
}

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
  write_u8(path, ((image.detach().clamp(-1.0, 1.0) + 1.0) * 127.5).round());
}

void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  write_u8(path, (mask.detach().clamp(0.0, 1.0) * 255.0).round().unsqueeze(0));
}

}  // namespace deffiller::image_io
