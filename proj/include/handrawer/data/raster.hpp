#pragma once
// Window crops, padding and resampling on [C,H,W] rasters.

#include "handrawer/core/tensor.hpp"
#include "handrawer/mesh/mesh.hpp"

namespace handrawer::data {

struct Window {
    int x0 = 0, y0 = 0, size = 0;
};

// size x size window centred on (cx, cy) in continuous pixel coordinates
// (pixel i spans [i, i+1)), shifted to stay inside a W x H image. Throws when
// size exceeds either dimension.
Window centered_window(double cx, double cy, int size, int W, int H);

Tensor crop(const Tensor& image, const Window& w);
Tensor crop_centered(const Tensor& image, double cx, double cy, int size);

// Crop centred on the bbox centre (bbox relative to the image).
Tensor crop_on_bbox(const Tensor& image, const mesh::NormalizedBBox& bbox, int size);

// Symmetric reflect padding (edge pixel not repeated) up to at least
// min_size in each dimension; the original sits at offset returned in
// pad_x/pad_y.
Tensor reflect_pad(const Tensor& image, int min_size, int* pad_x = nullptr, int* pad_y = nullptr);

// Area-weighted (box filter) resample with fractional pixel coverage.
Tensor resize_area(const Tensor& image, int h, int w);

}  // namespace handrawer::data
