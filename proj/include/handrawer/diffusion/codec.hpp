#pragma once
// Frozen linear latent codec standing in for a pretrained image autoencoder.
//
// Each f x f patch of each RGB channel is projected onto the unit vector
// (1/f, ..., 1/f), giving one latent value per patch and channel equal to
// f times the patch mean. The projection is orthogonal, so encoding never
// increases the norm, and decode (back-projection) is its exact left inverse
// on the projected subspace: decode(encode(x)) is the patchwise mean of x.

#include "handrawer/core/tensor.hpp"

namespace handrawer::diffusion {

class LatentCodec {
public:
    explicit LatentCodec(int factor = 4);

    int factor() const noexcept { return factor_; }
    int channels() const noexcept { return 3; }

    Tensor encode(const Tensor& image) const;   // [3,H,W] -> [3,H/f,W/f]
    Tensor decode(const Tensor& latent) const;  // [3,h,w] -> [3,h*f,w*f]

    // Fixed affine rescaling between codec latents and the unit-range space
    // the denoiser works in: images in [0,1] map into [-1,1].
    Tensor to_model_space(const Tensor& latent) const;
    Tensor from_model_space(const Tensor& z) const;

    Tensor encode_image(const Tensor& image) const { return to_model_space(encode(image)); }
    // Decodes a model-space latent and clamps to [0,1].
    Tensor decode_image(const Tensor& z) const;

private:
    int factor_;
};

}  // namespace handrawer::diffusion
