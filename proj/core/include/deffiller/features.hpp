#pragma once

#include <string>

#include <torch/types.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/metrics.hpp"

namespace deffiller {

/// Identifier of the frozen-encoder feature extractor; includes the weight
/// digest so features from different encoders never mix in one FID.
std::string extractor_id(const AutoencoderParams& params);

/// Global-average-pooled last encoder stage, one row per (C, H, W) image.
metrics::FeatureSet extract_features(const AutoencoderParams& params, const torch::Tensor& images);

}  // namespace deffiller
