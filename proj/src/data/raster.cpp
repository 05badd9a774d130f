#include "handrawer/data/raster.hpp"

#include <algorithm>
#include <cmath>

#include "handrawer/core/errors.hpp"

namespace handrawer::data {

Window centered_window(double cx, double cy, int size, int W, int H) {
    if (size < 1 || size > W || size > H) {
        throw ValidationError("crop size " + std::to_string(size) + " exceeds image " + std::to_string(W) + "x" +
                              std::to_string(H));
    }
    auto start = [size](double c, int n) {
        const int s = static_cast<int>(std::floor(c - size / 2.0 + 0.5));
        return std::clamp(s, 0, n - size);
    };
    return {start(cx, W), start(cy, H), size};
}

Tensor crop(const Tensor& image, const Window& w) {
    if (image.rank() != 3) throw ValidationError("crop expects a C x H x W raster");
    if (w.x0 < 0 || w.y0 < 0 || w.x0 + w.size > image.dim(2) || w.y0 + w.size > image.dim(1)) {
        throw ValidationError("crop window leaves the image");
    }
    const int C = image.dim(0);
    Tensor out({C, w.size, w.size});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < w.size; ++y) {
            const double* src = &image.data()[(static_cast<std::size_t>(c) * image.dim(1) + w.y0 + y) * image.dim(2) + w.x0];
            std::copy(src, src + w.size, &out.at(c, y, 0));
        }
    }
    return out;
}

Tensor crop_centered(const Tensor& image, double cx, double cy, int size) {
    if (image.rank() != 3) throw ValidationError("crop expects a C x H x W raster");
    return crop(image, centered_window(cx, cy, size, image.dim(2), image.dim(1)));
}

Tensor crop_on_bbox(const Tensor& image, const mesh::NormalizedBBox& bbox, int size) {
    bbox.validate();
    return crop_centered(image, bbox.cx() * image.dim(2), bbox.cy() * image.dim(1), size);
}

Tensor reflect_pad(const Tensor& image, int min_size, int* pad_x, int* pad_y) {
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    const int Ho = std::max(H, min_size), Wo = std::max(W, min_size);
    const int py = (Ho - H) / 2, px = (Wo - W) / 2;
    if (pad_x) *pad_x = px;
    if (pad_y) *pad_y = py;
    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - i;
    };
    Tensor out({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < Ho; ++y) {
            for (int x = 0; x < Wo; ++x) out.at(c, y, x) = image.at(c, reflect(y - py, H), reflect(x - px, W));
        }
    }
    return out;
}

namespace {

struct Cover {
    int src;
    double weight;
};

// For each output index, the source indices it overlaps and their share.
std::vector<std::vector<Cover>> coverage(int n_in, int n_out) {
    std::vector<std::vector<Cover>> out(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
        const double a = o * scale, b = (o + 1) * scale;
        for (int s = static_cast<int>(std::floor(a)); s < std::min(n_in, static_cast<int>(std::ceil(b))); ++s) {
            const double w = std::min(b, s + 1.0) - std::max(a, static_cast<double>(s));
            if (w > 0) out[static_cast<std::size_t>(o)].push_back({s, w / scale});
        }
    }
    return out;
}

}  // namespace

Tensor resize_area(const Tensor& image, int h, int w) {
    if (image.rank() != 3 || h < 1 || w < 1) throw ValidationError("resize expects a C x H x W raster and positive size");
    const int C = image.dim(0);
    const auto cy = coverage(image.dim(1), h), cx = coverage(image.dim(2), w);
    Tensor out({C, h, w});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (const auto& a : cy[static_cast<std::size_t>(y)]) {
                    for (const auto& b : cx[static_cast<std::size_t>(x)]) acc += a.weight * b.weight * image.at(c, a.src, b.src);
                }
                out.at(c, y, x) = acc;
            }
        }
    }
    return out;
}

}  // namespace handrawer::data
