#pragma once
// Toy conditional denoiser: a three-resolution UNet with text cross-attention
// at every level, plus a ControlNet-style trainable encoder copy whose
// zero-initialized outputs are added into the decoder skips.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/nn.hpp"

namespace handrawer::diffusion {

enum class Site { down, mid, up };
inline constexpr std::array<Site, 3> kSites = {Site::down, Site::mid, Site::up};
const char* site_name(Site s);

struct UNetConfig {
    int in_channels = 3;
    std::array<int, 3> channels = {16, 32, 32};  // per resolution H, H/2, H/4
    int groups = 4;
    int time_dim = 32;
    int text_width = 32;
    int heads = 2;
    // Where fusion features are added at each site: after the level's
    // cross-attention output (default) or into its input.
    bool inject_before_cross_attention = false;
};

struct ControlResiduals {
    std::array<ag::Var, 3> skips;  // one per resolution, decoder skip additions
    ag::Var mid;
};

// Called at each injection site with the UNet feature map [C,H,W]; returns
// the fused map, which must keep the same shape.
using InjectFn = std::function<ag::Var(Site, const ag::Var&)>;

struct DenoiseInputs {
    ag::Var z_t;   // [C,H,W]
    double t = 0;  // diffusion step
    ag::Var text;  // [L, text_width]
    const ControlResiduals* control = nullptr;
    InjectFn inject;
};

namespace detail {

struct ResBlock {
    nn::GroupNorm norm1, norm2;
    nn::Conv2d conv1, conv2;
    nn::Linear time;
    bool has_skip = false;
    nn::Conv2d skip;

    static ResBlock make(nn::ParameterStore& s, const std::string& name, int cin, int cout, int time_dim, int groups);
    ag::Var operator()(const ag::Var& x, const ag::Var& temb_act) const;
};

struct CrossAttnBlock {
    nn::LayerNorm norm;
    nn::MultiHeadAttention attn;

    static CrossAttnBlock make(nn::ParameterStore& s, const std::string& name, int channels, int text_width,
                               int heads);
    ag::Var operator()(const ag::Var& x, const ag::Var& text) const;
};

struct TimeEmbedding {
    nn::Linear fc1, fc2;
    int dim = 0;

    static TimeEmbedding make(nn::ParameterStore& s, const std::string& name, int dim);
    // Returns silu(embedding), ready for the per-block projections.
    ag::Var operator()(double t) const;
};

}  // namespace detail

class UNet {
public:
    UNet(nn::ParameterStore& store, const std::string& prefix, UNetConfig config);

    const UNetConfig& config() const noexcept { return config_; }
    // Predicted noise, same shape as inputs.z_t.
    ag::Var forward(const DenoiseInputs& inputs) const;
    // Shape [C,H,W] of the feature map handed to `inject` at each site for a
    // latent of spatial size H x W.
    std::vector<int> site_shape(Site site, int H, int W) const;

private:
    UNetConfig config_;
    detail::TimeEmbedding time_;
    nn::Conv2d conv_in_;
    std::array<detail::ResBlock, 3> down_res_;
    std::array<detail::CrossAttnBlock, 3> down_attn_;
    std::array<nn::Conv2d, 2> downsample_;
    detail::ResBlock mid_res1_, mid_res2_;
    detail::CrossAttnBlock mid_attn_;
    std::array<detail::ResBlock, 3> up_res_;
    std::array<detail::CrossAttnBlock, 3> up_attn_;
    std::array<nn::Conv2d, 2> upsample_;
    nn::GroupNorm norm_out_;
    nn::Conv2d conv_out_;
};

class ControlNet {
public:
    ControlNet(nn::ParameterStore& store, const std::string& prefix, UNetConfig config);

    // hint: control depth [1,H,W] at latent resolution, values in [0,1].
    ControlResiduals forward(const ag::Var& z_t, double t, const ag::Var& text, const ag::Var& hint) const;

private:
    UNetConfig config_;
    detail::TimeEmbedding time_;
    nn::Conv2d conv_in_;
    nn::Conv2d hint1_, hint2_;
    std::array<detail::ResBlock, 3> down_res_;
    std::array<detail::CrossAttnBlock, 3> down_attn_;
    std::array<nn::Conv2d, 2> downsample_;
    detail::ResBlock mid_res_;
    detail::CrossAttnBlock mid_attn_;
    std::array<nn::Conv2d, 3> zero_skip_;
    nn::Conv2d zero_mid_;
};

// Area-average resize of a single-channel raster [1,H,W] to [1,h,w]; H and W
// must be multiples of h and w.
Tensor downsample_area(const Tensor& raster, int h, int w);

}  // namespace handrawer::diffusion
