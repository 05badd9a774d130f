#include "handrawer/diffusion/codec.hpp"

#include <algorithm>

#include "handrawer/core/errors.hpp"

namespace handrawer::diffusion {

LatentCodec::LatentCodec(int factor) : factor_(factor) {
    if (factor < 1) throw ValidationError("codec factor must be positive");
}

Tensor LatentCodec::encode(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw ValidationError("codec expects a 3 x H x W image, got " + image.shape_str());
    const int H = image.dim(1), W = image.dim(2), f = factor_;
    if (H % f != 0 || W % f != 0) {
        throw ValidationError("image " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by codec factor " +
                              std::to_string(f));
    }
    const int h = H / f, w = W / f;
    Tensor z({3, h, w});
    const double inv = 1.0 / f;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) z.at(c, y / f, x / f) += image.at(c, y, x);
        }
    }
    z *= inv;
    return z;
}

Tensor LatentCodec::decode(const Tensor& latent) const {
    if (latent.rank() != 3 || latent.dim(0) != 3) throw ValidationError("codec expects a 3 x h x w latent, got " + latent.shape_str());
    const int f = factor_, h = latent.dim(1), w = latent.dim(2);
    Tensor img({3, h * f, w * f});
    const double inv = 1.0 / f;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h * f; ++y) {
            for (int x = 0; x < w * f; ++x) img.at(c, y, x) = latent.at(c, y / f, x / f) * inv;
        }
    }
    return img;
}

Tensor LatentCodec::to_model_space(const Tensor& latent) const {
    Tensor z = latent;
    const double f = factor_;
    for (double& v : z.storage()) v = (v - 0.5 * f) * (2.0 / f);
    return z;
}

Tensor LatentCodec::from_model_space(const Tensor& z) const {
    Tensor latent = z;
    const double f = factor_;
    for (double& v : latent.storage()) v = v * (f / 2.0) + 0.5 * f;
    return latent;
}

Tensor LatentCodec::decode_image(const Tensor& z) const {
    Tensor img = decode(from_model_space(z));
    for (double& v : img.storage()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

}  // namespace handrawer::diffusion
