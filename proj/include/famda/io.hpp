#pragma once

// On-disk forms of the grid types:
//   LabelMap  8-bit grayscale PNG, value = class index, 255 = ignore
//   Image     8-bit RGB PNG, scaled by 1/255 on load
//   DepthMap  FDPT: "FDPT", u16 version (1), u32 height, u32 width, then
//             height*width little-endian float32 row-major; NaN = invalid

#include <filesystem>

#include "famda/bytes.hpp"
#include "famda/gridcore.hpp"

namespace famda {

inline constexpr std::uint16_t kFdptVersion = 1;

LabelMap read_label_png(const std::filesystem::path& path, int num_classes);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

Image read_image_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Image& img);

/// Writes an arbitrary N x 3 matrix of [0,1] values as RGB (used for renders).
void write_rgb_png(const std::filesystem::path& path, GridShape shape,
                   const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& rgb);

Bytes encode_fdpt(const DepthMap& depth);
DepthMap decode_fdpt(std::span<const std::uint8_t> bytes);

DepthMap read_fdpt(const std::filesystem::path& path);
void write_fdpt(const std::filesystem::path& path, const DepthMap& depth);

}  // namespace famda
