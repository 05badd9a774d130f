#include "handrawer/diffusion/unet.hpp"

#include "handrawer/core/errors.hpp"

namespace handrawer::diffusion {

using ag::Var;

const char* site_name(Site s) {
    switch (s) {
        case Site::down: return "down";
        case Site::mid: return "mid";
        case Site::up: return "up";
    }
    return "?";
}

namespace detail {

namespace {

int fit_groups(int channels, int groups) {
    int g = std::min(groups, channels);
    while (channels % g != 0) --g;
    return g;
}

// [C,H,W] <-> [H*W, C] token views.
Var to_tokens(const Var& x) { return ag::transpose2d(ag::reshape(x, {x.dim(0), x.dim(1) * x.dim(2)})); }
Var from_tokens(const Var& tokens, int H, int W) {
    return ag::reshape(ag::transpose2d(tokens), {tokens.dim(1), H, W});
}

}  // namespace

ResBlock ResBlock::make(nn::ParameterStore& s, const std::string& name, int cin, int cout, int time_dim, int groups) {
    ResBlock b;
    b.norm1 = nn::GroupNorm::make(s, name + ".norm1", cin, fit_groups(cin, groups));
    b.conv1 = nn::Conv2d::make(s, name + ".conv1", cin, cout, 3, 1, 1);
    b.time = nn::Linear::make(s, name + ".time", time_dim, cout);
    b.norm2 = nn::GroupNorm::make(s, name + ".norm2", cout, fit_groups(cout, groups));
    b.conv2 = nn::Conv2d::make(s, name + ".conv2", cout, cout, 3, 1, 1);
    if (cin != cout) {
        b.has_skip = true;
        b.skip = nn::Conv2d::make(s, name + ".skip", cin, cout, 1, 1, 0);
    }
    return b;
}

Var ResBlock::operator()(const Var& x, const Var& temb_act) const {
    Var h = conv1(ag::silu(norm1(x)));
    Var tb = ag::reshape(time(temb_act), {h.dim(0)});
    h = ag::add_channel_bias(h, tb);
    h = conv2(ag::silu(norm2(h)));
    return ag::add(has_skip ? skip(x) : x, h);
}

CrossAttnBlock CrossAttnBlock::make(nn::ParameterStore& s, const std::string& name, int channels, int text_width,
                                    int heads) {
    CrossAttnBlock b;
    b.norm = nn::LayerNorm::make(s, name + ".norm", channels);
    b.attn = nn::MultiHeadAttention::make(s, name + ".attn", channels, text_width, channels, heads);
    return b;
}

Var CrossAttnBlock::operator()(const Var& x, const Var& text) const {
    const int H = x.dim(1), W = x.dim(2);
    Var tokens = to_tokens(x);
    Var out = attn(norm(tokens), text);
    return ag::add(x, from_tokens(out, H, W));
}

TimeEmbedding TimeEmbedding::make(nn::ParameterStore& s, const std::string& name, int dim) {
    TimeEmbedding e;
    e.dim = dim;
    e.fc1 = nn::Linear::make(s, name + ".fc1", dim, dim);
    e.fc2 = nn::Linear::make(s, name + ".fc2", dim, dim);
    return e;
}

Var TimeEmbedding::operator()(double t) const {
    Var base = ag::constant(nn::sinusoidal_embedding(t, dim).reshaped({1, dim}));
    return ag::silu(fc2(ag::silu(fc1(base))));
}

}  // namespace detail

namespace {

void check_config(const UNetConfig& c) {
    for (int ch : c.channels) {
        if (ch <= 0 || ch % c.heads != 0) {
            throw ValidationError("unet channel width " + std::to_string(ch) + " must be a positive multiple of " +
                                  std::to_string(c.heads) + " heads");
        }
    }
    if (c.time_dim < 2 || c.text_width < 1) throw ValidationError("unet time/text widths must be positive");
}

Var apply_site(const InjectFn& inject, Site site, const Var& h) {
    if (!inject) return h;
    Var out = inject(site, h);
    if (out.shape() != h.shape()) {
        throw ValidationError(std::string("fusion at site '") + site_name(site) + "' returned " +
                              out.value().shape_str() + ", expected " + h.value().shape_str());
    }
    return out;
}

}  // namespace

UNet::UNet(nn::ParameterStore& store, const std::string& prefix, UNetConfig config) : config_(config) {
    check_config(config_);
    const auto& ch = config_.channels;
    const std::string p = prefix + ".";
    time_ = detail::TimeEmbedding::make(store, p + "time", config_.time_dim);
    conv_in_ = nn::Conv2d::make(store, p + "conv_in", config_.in_channels, ch[0], 3, 1, 1);
    int prev = ch[0];
    for (int i = 0; i < 3; ++i) {
        const std::string n = p + "down" + std::to_string(i);
        down_res_[i] = detail::ResBlock::make(store, n + ".res", prev, ch[i], config_.time_dim, config_.groups);
        down_attn_[i] = detail::CrossAttnBlock::make(store, n + ".xattn", ch[i], config_.text_width, config_.heads);
        if (i < 2) downsample_[i] = nn::Conv2d::make(store, n + ".downsample", ch[i], ch[i], 3, 2, 1);
        prev = ch[i];
    }
    mid_res1_ = detail::ResBlock::make(store, p + "mid.res1", ch[2], ch[2], config_.time_dim, config_.groups);
    mid_attn_ = detail::CrossAttnBlock::make(store, p + "mid.xattn", ch[2], config_.text_width, config_.heads);
    mid_res2_ = detail::ResBlock::make(store, p + "mid.res2", ch[2], ch[2], config_.time_dim, config_.groups);
    prev = ch[2];
    for (int i = 2; i >= 0; --i) {
        const std::string n = p + "up" + std::to_string(i);
        up_res_[i] = detail::ResBlock::make(store, n + ".res", prev + ch[i], ch[i], config_.time_dim, config_.groups);
        up_attn_[i] = detail::CrossAttnBlock::make(store, n + ".xattn", ch[i], config_.text_width, config_.heads);
        if (i > 0) upsample_[i - 1] = nn::Conv2d::make(store, n + ".upsample", ch[i], ch[i], 3, 1, 1);
        prev = ch[i];
    }
    norm_out_ = nn::GroupNorm::make(store, p + "norm_out", ch[0], config_.groups);
    conv_out_ = nn::Conv2d::make(store, p + "conv_out", ch[0], config_.in_channels, 3, 1, 1);
}

std::vector<int> UNet::site_shape(Site site, int H, int W) const {
    switch (site) {
        case Site::down: return {config_.channels[0], H, W};
        case Site::mid: return {config_.channels[2], H / 4, W / 4};
        case Site::up: return {config_.channels[0], H, W};
    }
    return {};
}

Var UNet::forward(const DenoiseInputs& in) const {
    const Var& z = in.z_t;
    if (z.value().rank() != 3 || z.dim(0) != config_.in_channels || z.dim(1) % 4 != 0 || z.dim(2) % 4 != 0) {
        throw ValidationError("unet input must be " + std::to_string(config_.in_channels) +
                              " x H x W with H, W divisible by 4, got " + z.value().shape_str());
    }
    if (in.text.value().rank() != 2 || in.text.dim(1) != config_.text_width || in.text.dim(0) < 1) {
        throw ValidationError("text embedding must be L x " + std::to_string(config_.text_width));
    }
    const Var temb = time_(in.t);
    const bool before = config_.inject_before_cross_attention;

    Var h = conv_in_(z);
    std::array<Var, 3> skips;
    for (int i = 0; i < 3; ++i) {
        h = down_res_[i](h, temb);
        if (i == 0 && before) h = apply_site(in.inject, Site::down, h);
        h = down_attn_[i](h, in.text);
        if (i == 0 && !before) h = apply_site(in.inject, Site::down, h);
        skips[i] = h;
        if (i < 2) h = downsample_[i](h);
    }
    h = mid_res1_(h, temb);
    if (before) h = apply_site(in.inject, Site::mid, h);
    h = mid_attn_(h, in.text);
    if (!before) h = apply_site(in.inject, Site::mid, h);
    h = mid_res2_(h, temb);
    if (in.control) h = ag::add_residual(h, in.control->mid);

    for (int i = 2; i >= 0; --i) {
        Var skip = skips[i];
        if (in.control) skip = ag::add_residual(skip, in.control->skips[i]);
        h = up_res_[i](ag::concat_rows({h, skip}), temb);
        if (i == 0 && before) h = apply_site(in.inject, Site::up, h);
        h = up_attn_[i](h, in.text);
        if (i == 0 && !before) h = apply_site(in.inject, Site::up, h);
        if (i > 0) h = upsample_[i - 1](ag::upsample_nearest2x(h));
    }
    return conv_out_(ag::silu(norm_out_(h)));
}

ControlNet::ControlNet(nn::ParameterStore& store, const std::string& prefix, UNetConfig config) : config_(config) {
    check_config(config_);
    const auto& ch = config_.channels;
    const std::string p = prefix + ".";
    time_ = detail::TimeEmbedding::make(store, p + "time", config_.time_dim);
    conv_in_ = nn::Conv2d::make(store, p + "conv_in", config_.in_channels, ch[0], 3, 1, 1);
    hint1_ = nn::Conv2d::make(store, p + "hint1", 1, ch[0], 3, 1, 1);
    hint2_ = nn::Conv2d::make(store, p + "hint2", ch[0], ch[0], 3, 1, 1, true);
    int prev = ch[0];
    for (int i = 0; i < 3; ++i) {
        const std::string n = p + "down" + std::to_string(i);
        down_res_[i] = detail::ResBlock::make(store, n + ".res", prev, ch[i], config_.time_dim, config_.groups);
        down_attn_[i] = detail::CrossAttnBlock::make(store, n + ".xattn", ch[i], config_.text_width, config_.heads);
        if (i < 2) downsample_[i] = nn::Conv2d::make(store, n + ".downsample", ch[i], ch[i], 3, 2, 1);
        zero_skip_[i] = nn::Conv2d::make(store, n + ".zero_conv", ch[i], ch[i], 1, 1, 0, true);
        prev = ch[i];
    }
    mid_res_ = detail::ResBlock::make(store, p + "mid.res", ch[2], ch[2], config_.time_dim, config_.groups);
    mid_attn_ = detail::CrossAttnBlock::make(store, p + "mid.xattn", ch[2], config_.text_width, config_.heads);
    zero_mid_ = nn::Conv2d::make(store, p + "mid.zero_conv", ch[2], ch[2], 1, 1, 0, true);
}

ControlResiduals ControlNet::forward(const Var& z_t, double t, const Var& text, const Var& hint) const {
    if (hint.value().rank() != 3 || hint.dim(0) != 1 || hint.dim(1) != z_t.dim(1) || hint.dim(2) != z_t.dim(2)) {
        throw ValidationError("control hint must be 1 x " + std::to_string(z_t.dim(1)) + " x " +
                              std::to_string(z_t.dim(2)) + ", got " + hint.value().shape_str());
    }
    const Var temb = time_(t);
    Var h = ag::add(conv_in_(z_t), hint2_(ag::silu(hint1_(hint))));
    ControlResiduals out;
    for (int i = 0; i < 3; ++i) {
        h = down_res_[i](h, temb);
        h = down_attn_[i](h, text);
        out.skips[i] = zero_skip_[i](h);
        if (i < 2) h = downsample_[i](h);
    }
    h = mid_res_(h, temb);
    h = mid_attn_(h, text);
    out.mid = zero_mid_(h);
    return out;
}

Tensor downsample_area(const Tensor& raster, int h, int w) {
    if (raster.rank() != 3 || raster.dim(0) != 1 || raster.dim(1) % h != 0 || raster.dim(2) % w != 0) {
        throw ValidationError("area resize needs a 1 x H x W raster with H, W multiples of the target, got " +
                              raster.shape_str());
    }
    const int fy = raster.dim(1) / h, fx = raster.dim(2) / w;
    Tensor out({1, h, w});
    for (int y = 0; y < raster.dim(1); ++y) {
        for (int x = 0; x < raster.dim(2); ++x) out.at(0, y / fy, x / fx) += raster.at(0, y, x);
    }
    out *= 1.0 / (fy * fx);
    return out;
}

}  // namespace handrawer::diffusion
