#pragma once

#include <filesystem>

#include "regcd/tensor.hpp"

namespace regcd {

// 8-bit PNG. Images load as {C, H, W} in [0, 1] with C = 1 (gray) or 3 (RGB);
// alpha is dropped and palettes are expanded. Writing rounds v * 255.
Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& image);

// Binary masks are single-channel PNGs with values {0, 255}.
Tensor read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Tensor& mask);

// "PIEH", int32 width, int32 height, then interleaved float32 (u, v) per pixel
// in row-major order; all little-endian. uv is {2, H, W}.
void write_flow_file(const std::filesystem::path& path, const Tensor& uv);
Tensor read_flow_file(const std::filesystem::path& path);

// "PIEF", int32 width, int32 height, int32 channels, then float32 values with
// the channels of each pixel contiguous. field is {C, H, W}.
void write_feature_file(const std::filesystem::path& path, const Tensor& field);
Tensor read_feature_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames it into place.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace regcd
