#include "handrawer/fusion/ppzp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "handrawer/core/errors.hpp"

namespace handrawer::fusion {

using ag::Var;

ag::Region scaled_region(const mesh::NormalizedBBox& bbox, int H, int W) {
    bbox.validate();
    if (H < 1 || W < 1) throw ValidationError("target grid must be at least 1 x 1");
    ag::Region r;
    r.r0 = static_cast<int>(std::floor(bbox.y0 * H));
    r.c0 = static_cast<int>(std::floor(bbox.x0 * W));
    r.r1 = std::max(r.r0 + 1, static_cast<int>(std::ceil(bbox.y1 * H)));
    r.c1 = std::max(r.c0 + 1, static_cast<int>(std::ceil(bbox.x1 * W)));
    r.r1 = std::min(r.r1, H);
    r.c1 = std::min(r.c1, W);
    if (r.r0 >= H || r.c0 >= W || r.height() < 1 || r.width() < 1) {
        throw ValidationError("bbox region collapses outside the " + std::to_string(H) + "x" + std::to_string(W) + " grid");
    }
    return r;
}

namespace {

struct Tap {
    int i0, i1;
    double w0, w1;
};

Tap tap(int out, int n_in, int n_out) {
    const double src = (out + 0.5) * n_in / n_out - 0.5;
    const double fl = std::floor(src);
    const double frac = src - fl;
    const int i0 = std::clamp(static_cast<int>(fl), 0, n_in - 1);
    const int i1 = std::clamp(static_cast<int>(fl) + 1, 0, n_in - 1);
    return {i0, i1, 1.0 - frac, frac};
}

const SparseMatrix& cached_bilinear(int h_in, int w_in, int h_out, int w_out) {
    static std::mutex mu;
    static std::map<std::array<int, 4>, SparseMatrix> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::array<int, 4>{h_in, w_in, h_out, w_out};
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, bilinear_matrix(h_in, w_in, h_out, w_out)).first;
    return it->second;
}

// Channel-last tokens of a [c,h,w] map.
Var cells(const Var& feature) {
    return ag::transpose2d(ag::reshape(feature, {feature.dim(0), feature.dim(1) * feature.dim(2)}));
}

}  // namespace

SparseMatrix bilinear_matrix(int h_in, int w_in, int h_out, int w_out) {
    if (h_in < 1 || w_in < 1 || h_out < 1 || w_out < 1) throw ValidationError("resize dimensions must be positive");
    std::vector<SparseMatrix::Triplet> t;
    for (int y = 0; y < h_out; ++y) {
        const Tap ty = tap(y, h_in, h_out);
        for (int x = 0; x < w_out; ++x) {
            const Tap tx = tap(x, w_in, w_out);
            const int row = y * w_out + x;
            t.push_back({row, ty.i0 * w_in + tx.i0, ty.w0 * tx.w0});
            t.push_back({row, ty.i0 * w_in + tx.i1, ty.w0 * tx.w1});
            t.push_back({row, ty.i1 * w_in + tx.i0, ty.w1 * tx.w0});
            t.push_back({row, ty.i1 * w_in + tx.i1, ty.w1 * tx.w1});
        }
    }
    return SparseMatrix::from_triplets(h_out * w_out, h_in * w_in, std::move(t));
}

Var ppzp_pad(const Var& feature, const mesh::NormalizedBBox& bbox, int H, int W) {
    if (feature.value().rank() != 3) throw ValidationError("ppzp_pad expects a c x h x w feature map");
    const ag::Region region = scaled_region(bbox, H, W);
    const int c = feature.dim(0);
    const SparseMatrix& R = cached_bilinear(feature.dim(1), feature.dim(2), region.height(), region.width());
    Var resized = ag::sparse_apply(R, cells(feature));
    return ag::region_add(ag::constant(Tensor({c, H, W})), resized, region);
}

InjectionSite InjectionSite::make(nn::ParameterStore& store, const std::string& name, Site scale, int feature_channels,
                                  std::vector<int> target_shape) {
    if (target_shape.size() != 3) throw ValidationError("injection site target must be C x H x W");
    InjectionSite s;
    s.scale = scale;
    s.weight = &store.add(name + ".weight", {feature_channels, target_shape[0]}, nn::Init::zeros());
    s.bias = &store.add(name + ".bias", {target_shape[0]}, nn::Init::zeros());
    s.target_shape = std::move(target_shape);
    return s;
}

Var inject(const Var& unet_feature, const Var& feature, const mesh::NormalizedBBox& bbox, const InjectionSite& site,
           bool preserve_position) {
    if (!site.bound()) throw ValidationError("injection site is not bound");
    const std::string name = diffusion::site_name(site.scale);
    if (unet_feature.shape() != site.target_shape) {
        throw ValidationError("site '" + name + "' is bound to " + shape_str(site.target_shape) + " but got " +
                              unet_feature.value().shape_str());
    }
    if (feature.value().rank() != 3 || feature.dim(0) != site.weight->value.dim(0)) {
        throw ValidationError("site '" + name + "' expects a " + std::to_string(site.weight->value.dim(0)) +
                              "-channel fusion map, got " + feature.value().shape_str());
    }
    const int H = site.target_shape[1], W = site.target_shape[2];
    const ag::Region region = preserve_position ? scaled_region(bbox, H, W) : ag::Region{0, H, 0, W};
    const SparseMatrix& R = cached_bilinear(feature.dim(1), feature.dim(2), region.height(), region.width());
    Var resized = ag::sparse_apply(R, cells(feature));
    Var delta = ag::linear(resized, nn::var(site.weight), nn::var(site.bias));
    return ag::region_add(unet_feature, delta, region);
}

FusionSites FusionSites::make(nn::ParameterStore& store, const std::string& prefix, int feature_channels,
                              const diffusion::UNet& unet, int latent_h, int latent_w) {
    FusionSites f;
    for (Site s : diffusion::kSites) {
        f.sites[static_cast<std::size_t>(s)] = InjectionSite::make(store, prefix + "." + diffusion::site_name(s), s,
                                                                   feature_channels, unet.site_shape(s, latent_h, latent_w));
    }
    return f;
}

const Var& fusion_map(const model::FusionFeatureSet& fusion, Site s) {
    switch (s) {
        case Site::down: return fusion.down;
        case Site::mid: return fusion.mid;
        case Site::up: return fusion.up;
    }
    return fusion.down;
}

Var fuse_site(Site site, const Var& unet_feature, const model::FusionFeatureSet& fusion, const FusionSites& sites,
              bool preserve_position) {
    const Var& map = fusion_map(fusion, site);
    if (!map) throw ValidationError(std::string("fusion map for scale '") + diffusion::site_name(site) + "' is missing");
    return inject(unet_feature, map, fusion.bbox, sites.at(site), preserve_position);
}

std::array<Var, 3> fuse_all(const std::array<Var, 3>& unet_features, const model::FusionFeatureSet& fusion,
                            const FusionSites& sites, bool preserve_position) {
    std::array<Var, 3> out;
    for (Site s : diffusion::kSites) {
        const auto i = static_cast<std::size_t>(s);
        out[i] = fuse_site(s, unet_features[i], fusion, sites, preserve_position);
    }
    return out;
}

diffusion::InjectFn make_injector(const model::FusionFeatureSet& fusion, const FusionSites& sites,
                                  bool preserve_position) {
    return [&fusion, &sites, preserve_position](Site s, const Var& h) {
        return fuse_site(s, h, fusion, sites, preserve_position);
    };
}

}  // namespace handrawer::fusion
