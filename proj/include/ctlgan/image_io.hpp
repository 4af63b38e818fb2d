#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace ctlgan {

/// Raster files (.png, .ppm, .pgm) directly inside `dir`, sorted lexicographically by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Decodes a raster file as [C, H, W] uint8 (C = 1 or 3). Throws InvalidData on undecodable input.
torch::Tensor decode_image(const std::filesystem::path& file);

/// Center-crops to a square, resizes to resolution x resolution and maps to [-1, 1] float32.
torch::Tensor prepare_image(const torch::Tensor& raw, int64_t resolution, int64_t channels = 3);

torch::Tensor load_image(const std::filesystem::path& file, int64_t resolution, int64_t channels = 3);

/// Loads every image of a directory as [N, C, R, R]. Throws ConfigError when `dir` is missing.
torch::Tensor load_image_dir(const std::filesystem::path& dir, int64_t resolution, int64_t channels = 3);

/// [-1, 1] image -> [C, H, W] uint8 with round-half-up quantization.
torch::Tensor to_uint8(const torch::Tensor& image);

/// Writes a [C, H, W] image in [-1, 1] (C = 1 or 3) as an 8-bit PNG.
void write_png(const std::filesystem::path& file, const torch::Tensor& image);

/// Writes each image of a [N, C, H, W] batch as `<prefix>_<00000>.png`; returns the written paths.
std::vector<std::filesystem::path> write_images(const std::filesystem::path& dir, const torch::Tensor& images,
                                                const std::string& prefix = "img");

/// Tiles a batch row-major (tile i at row i / cols, column i % cols). cols = 0 picks ceil(sqrt(N)).
/// Unused tiles are filled with -1.
torch::Tensor make_grid(const torch::Tensor& images, int64_t cols = 0);

}  // namespace ctlgan
