#include "deffiller/features.hpp"

#include <algorithm>

#include <torch/torch.h>

#include "deffiller/error.hpp"
#include "deffiller/hashing.hpp"

namespace deffiller {

namespace {
constexpr std::int64_t kFeatureChunk = 64;
}

std::string extractor_id(const AutoencoderParams& params) {
  require(!params.net.is_empty(), "feature extractor needs a trained autoencoder");
  return "ae-gap-" + module_digest(*params.net).substr(0, 16);
}

metrics::FeatureSet extract_features(const AutoencoderParams& params, const torch::Tensor& images) {
  require(images.defined() && images.dim() == 4 && images.size(0) >= 1, "feature extraction needs (N, C, H, W) images");
  torch::NoGradGuard no_grad;
  auto net = params.net;
  std::vector<torch::Tensor> pooled;
  for (std::int64_t start = 0; start < images.size(0); start += kFeatureChunk) {
    const auto count = std::min(kFeatureChunk, images.size(0) - start);
    pooled.push_back(net->features(images.narrow(0, start, count)).mean({2, 3}));
  }
  auto rows = torch::cat(pooled).to(torch::kFloat64).contiguous();
  metrics::FeatureSet set;
  set.extractor_id = extractor_id(params);
  set.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      rows.data_ptr<double>(), rows.size(0), rows.size(1));
  return set;
}

}  // namespace deffiller
