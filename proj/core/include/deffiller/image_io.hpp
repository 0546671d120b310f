#pragma once

#include <filesystem>

#include <torch/types.h>

namespace deffiller::image_io {

/// Reads a raster as a float tensor of shape (channels, H, W) scaled to [0,1].
/// Throws naming the path when the file cannot be decoded.
torch::Tensor read_unit(const std::filesystem::path& path, int channels);

/// Bilinear resize of a (C, H, W) tensor.
torch::Tensor resize_bilinear(const torch::Tensor& image, int height, int width);

/// Nearest-neighbour resize of an (H, W) tensor.
torch::Tensor resize_nearest(const torch::Tensor& map, int height, int width);

/// Writes a (C, H, W) image in [-1,1] as 8-bit PNG.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

/// Writes an (H, W) map in [0,1] as 8-bit PNG.
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// Writes a (C, H, W) tensor of 8-bit-ranged values [0,255] losslessly.
void write_u8(const std::filesystem::path& path, const torch::Tensor& image);

}  // namespace deffiller::image_io
