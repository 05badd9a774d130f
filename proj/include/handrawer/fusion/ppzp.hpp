#pragma once
// Position-preserving zero padding: a hand-region feature map is resized into
// the bounding-box region of a UNet-scale grid (zeros elsewhere), projected
// to the UNet channel count, and added to the UNet feature map.

#include <array>
#include <string>
#include <vector>

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/nn.hpp"
#include "handrawer/core/sparse.hpp"
#include "handrawer/diffusion/unet.hpp"
#include "handrawer/mesh/mesh.hpp"
#include "handrawer/model/handrawer.hpp"

namespace handrawer::fusion {

using diffusion::Site;

// Rows [floor(y0 H), max(r0+1, ceil(y1 H))), columns likewise. Throws when
// the region would fall outside the grid.
ag::Region scaled_region(const mesh::NormalizedBBox& bbox, int H, int W);

// Bilinear resize with half-pixel centres and edge clamping, as a fixed
// [h_out*w_out, h_in*w_in] operator on row-major cells.
SparseMatrix bilinear_matrix(int h_in, int w_in, int h_out, int w_out);

// Resizes feature [c,h,w] into the bbox region of an H x W grid; every cell
// outside the region is exactly 0. Returns [c,H,W].
ag::Var ppzp_pad(const ag::Var& feature, const mesh::NormalizedBBox& bbox, int H, int W);

struct InjectionSite {
    Site scale = Site::down;
    std::vector<int> target_shape;  // [C_s, H_s, W_s]
    nn::Parameter* weight = nullptr;  // [c, C_s], zero at init
    nn::Parameter* bias = nullptr;    // [C_s], zero at init

    bool bound() const { return weight && bias && target_shape.size() == 3; }
    static InjectionSite make(nn::ParameterStore& store, const std::string& name, Site scale, int feature_channels,
                              std::vector<int> target_shape);
};

// unet_feature + projection(ppzp_pad(feature)). The projection (including
// its bias) is evaluated only on region cells, so cells outside the region
// keep their exact bits for every parameter state. With preserve_position
// off, the feature is resized to the whole grid and added everywhere.
ag::Var inject(const ag::Var& unet_feature, const ag::Var& feature, const mesh::NormalizedBBox& bbox,
               const InjectionSite& site, bool preserve_position = true);

struct FusionSites {
    std::array<InjectionSite, 3> sites;  // indexed by Site

    static FusionSites make(nn::ParameterStore& store, const std::string& prefix, int feature_channels,
                            const diffusion::UNet& unet, int latent_h, int latent_w);
    const InjectionSite& at(Site s) const { return sites[static_cast<std::size_t>(s)]; }
};

const ag::Var& fusion_map(const model::FusionFeatureSet& fusion, Site s);

// Applies inject at one site; throws when a site is unbound or its map is
// missing.
ag::Var fuse_site(Site site, const ag::Var& unet_feature, const model::FusionFeatureSet& fusion,
                  const FusionSites& sites, bool preserve_position = true);

// Fuses all three scales in the fixed order down, mid, up.
std::array<ag::Var, 3> fuse_all(const std::array<ag::Var, 3>& unet_features, const model::FusionFeatureSet& fusion,
                                const FusionSites& sites, bool preserve_position = true);

// Injection callback for UNet::forward.
diffusion::InjectFn make_injector(const model::FusionFeatureSet& fusion, const FusionSites& sites,
                                  bool preserve_position = true);

}  // namespace handrawer::fusion
