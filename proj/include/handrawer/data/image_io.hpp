#pragma once
// Lossless raster files. RGB is stored as 8-bit PNG, depth as 16-bit
// grayscale PNG. In memory both are [C,H,W] tensors in [0,1]: an 8-bit value
// v maps to v/255 and a 16-bit value to v/65535.

#include <filesystem>

#include "handrawer/core/tensor.hpp"

namespace handrawer::data {

// Rounds every value to the nearest representable level of the given bit
// depth (values are clamped to [0,1] first).
Tensor quantize(const Tensor& raster, int bits);

void write_png_rgb8(const std::filesystem::path& path, const Tensor& rgb);
void write_png_gray16(const std::filesystem::path& path, const Tensor& gray);
// Reads 8/16-bit gray or RGB(A) PNG into [1,H,W] or [3,H,W]; alpha dropped.
Tensor read_png(const std::filesystem::path& path);

}  // namespace handrawer::data
