#pragma once
// Multimodal hand-region module: text, depth, mesh and bounding-box encoders,
// seven self-attention layers with paired cross-attention across a down, mid
// and up block, and a decoder reconstructing the hand crop.
//
// Token grids: down and up outputs are grid_down x grid_down tokens, mid is
// half that. Feature maps are laid out [C, H, W] like the UNet's.

#include <array>
#include <string>
#include <vector>

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/nn.hpp"
#include "handrawer/core/sparse.hpp"
#include "handrawer/diffusion/text.hpp"
#include "handrawer/mesh/mesh.hpp"

namespace handrawer::model {

enum class MeshEncoder { graph, flat, none };

struct HanDrawerConfig {
    int width = 128;
    int heads = 4;
    int depth_size = 64;   // hand depth input resolution (square)
    int depth_patch = 4;   // depth_size / depth_patch must equal grid_down
    int grid_down = 16;
    int recon_size = 64;   // reconstructed hand crop resolution
    int gcn_layers = 3;
    MeshEncoder mesh_encoder = MeshEncoder::graph;
    // Cross-attention pairing: pair k uses stream k as query and stream
    // pairing[k] (plus the bbox tokens) as keys/values.
    std::array<int, 3> pairing = {1, 2, 0};
    double bbox_norm_eps = 1e-10;

    void validate() const;
};

// Fixed graph structure of the mesh: normalized adjacency and the pooling of
// vertices into the 21 joint groups.
struct MeshGraph {
    SparseMatrix adjacency;  // [V, V]
    SparseMatrix pool;       // [21, V], rows average their group

    int vertex_count() const { return adjacency.rows; }
    static MeshGraph from_groups(SparseMatrix adjacency, const std::vector<int>& vertex_group);
    // Procedural hand topology with symmetric normalization.
    static MeshGraph procedural();
};

struct FusionFeatureSet {
    ag::Var down;  // [d, g, g]
    ag::Var mid;   // [d, g/2, g/2]
    ag::Var up;    // [d, g, g]
    mesh::NormalizedBBox bbox;
};

struct HanDrawerInputs {
    std::vector<std::string> text_tokens;
    Tensor hand_depth;  // [1, depth_size, depth_size] in [0,1]
    Tensor vertices;    // [V, 3]; ignored when the mesh branch is disabled
    mesh::NormalizedBBox bbox;
};

struct HanDrawerOutput {
    FusionFeatureSet fusion;
    ag::Var reconstruction;  // [3, recon_size, recon_size] in [0,1]
};

// Tokens for a gesture label; throws ValidationError outside the vocabulary.
std::vector<std::string> label_tokens(std::string_view label);

// One graph-convolution layer: adjacency * (h w) + b, without activation.
ag::Var gcn_layer(const SparseMatrix& adjacency, const ag::Var& h, const ag::Var& w, const ag::Var& b);

class HanDrawer {
public:
    HanDrawer(nn::ParameterStore& store, const std::string& prefix, HanDrawerConfig config,
              const diffusion::TextEncoder& text, MeshGraph graph);

    const HanDrawerConfig& config() const noexcept { return config_; }
    const MeshGraph& graph() const noexcept { return graph_; }

    ag::Var encode_text(const std::vector<std::string>& tokens) const;  // [L_t, d]
    ag::Var encode_depth(const Tensor& hand_depth) const;               // [g*g, d]
    ag::Var encode_mesh(const Tensor& vertices) const;                  // [21, d]
    ag::Var encode_bbox(const mesh::NormalizedBBox& bbox) const;        // [4, d]

    HanDrawerOutput forward(const HanDrawerInputs& inputs) const;

private:
    struct SelfAttn {
        nn::LayerNorm norm;
        nn::MultiHeadAttention attn;
        ag::Var operator()(const ag::Var& x) const;
    };
    struct CrossAttn {
        nn::LayerNorm norm_q, norm_kv;
        nn::MultiHeadAttention attn;
        ag::Var operator()(const ag::Var& q, const ag::Var& kv) const;
    };
    struct Merge {
        nn::Linear fc1, fc2;
        ag::Var operator()(const std::vector<ag::Var>& parts) const;
    };

    SelfAttn make_self(nn::ParameterStore& s, const std::string& name) const;
    CrossAttn make_cross(nn::ParameterStore& s, const std::string& name) const;
    ag::Var to_grid(const ag::Var& tokens, int g) const;
    ag::Var from_grid(const ag::Var& grid) const;
    std::vector<ag::Var> paired(const std::array<CrossAttn, 3>& layers, const std::vector<ag::Var>& streams,
                                const ag::Var& bbox) const;

    HanDrawerConfig config_;
    const diffusion::TextEncoder* text_;
    MeshGraph graph_;

    nn::Linear text_proj_;
    nn::Parameter* resample_text_ = nullptr;  // [g*g, L_t]
    nn::Conv2d depth_embed_;
    nn::Parameter* depth_pos_ = nullptr;      // [g*g, d]
    std::vector<nn::Linear> mesh_layers_;
    nn::Parameter* mesh_group_embed_ = nullptr;  // [21, d]
    nn::Parameter* resample_mesh_ = nullptr;     // [g*g, 21]
    nn::Parameter* bbox_scale_ = nullptr;        // [4, d]
    nn::Parameter* bbox_shift_ = nullptr;        // [4, d]
    nn::MultiHeadAttention bbox_attn_;
    std::array<SelfAttn, 7> sa_;
    std::array<CrossAttn, 3> down_cross_;
    Merge down_merge_;
    CrossAttn mid_cross_;
    std::array<CrossAttn, 3> up_cross_;
    Merge up_merge_;
    nn::Linear dec1_, dec2_;
};

}  // namespace handrawer::model
