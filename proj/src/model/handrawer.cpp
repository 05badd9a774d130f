#include "handrawer/model/handrawer.hpp"

#include <cmath>

#include "handrawer/core/errors.hpp"
#include "handrawer/data/gestures.hpp"
#include "handrawer/mesh/procedural.hpp"

namespace handrawer::model {

using ag::Var;

void HanDrawerConfig::validate() const {
    if (width <= 0 || heads <= 0 || width % heads != 0) {
        throw ValidationError("hand module width " + std::to_string(width) + " must be a positive multiple of " +
                              std::to_string(heads) + " heads");
    }
    if (grid_down < 2 || grid_down % 2 != 0) throw ValidationError("token grid must be even and at least 2");
    if (depth_patch <= 0 || depth_size % depth_patch != 0 || depth_size / depth_patch != grid_down) {
        throw ValidationError("depth_size / depth_patch must equal the token grid " + std::to_string(grid_down));
    }
    if (recon_size % grid_down != 0) throw ValidationError("reconstruction size must be a multiple of the token grid");
    if (gcn_layers < 1) throw ValidationError("mesh encoder needs at least one layer");
    std::array<bool, 3> seen{};
    for (int p : pairing) {
        if (p < 0 || p > 2 || seen[static_cast<std::size_t>(p)]) throw ValidationError("pairing must be a permutation of {0,1,2}");
        seen[static_cast<std::size_t>(p)] = true;
    }
}

MeshGraph MeshGraph::from_groups(SparseMatrix adjacency, const std::vector<int>& vertex_group) {
    const int V = adjacency.rows;
    if (static_cast<int>(vertex_group.size()) != V) throw ValidationError("vertex group count does not match adjacency");
    std::vector<int> size(mesh::kKeypoints, 0);
    for (int g : vertex_group) {
        if (g < 0 || g >= mesh::kKeypoints) throw ValidationError("vertex group index out of range");
        size[static_cast<std::size_t>(g)] += 1;
    }
    std::vector<SparseMatrix::Triplet> t;
    for (int v = 0; v < V; ++v) {
        const int g = vertex_group[static_cast<std::size_t>(v)];
        t.push_back({g, v, 1.0 / size[static_cast<std::size_t>(g)]});
    }
    for (int g = 0; g < mesh::kKeypoints; ++g) {
        if (size[static_cast<std::size_t>(g)] == 0) throw ValidationError("vertex group " + std::to_string(g) + " is empty");
    }
    return {std::move(adjacency), SparseMatrix::from_triplets(mesh::kKeypoints, V, std::move(t))};
}

MeshGraph MeshGraph::procedural() {
    const auto& topo = mesh::procedural_topology();
    mesh::HandMesh m;
    m.vertices = topo.rest_vertices;
    m.edges = topo.edges;
    return from_groups(mesh::build_adjacency(m, mesh::AdjacencyNorm::symmetric), topo.vertex_group);
}

std::vector<std::string> label_tokens(std::string_view label) {
    return {data::canonical_gesture(label)};
}

Var gcn_layer(const SparseMatrix& adjacency, const Var& h, const Var& w, const Var& b) {
    // (A h) w equals A (h w); aggregating first is cheaper when h is narrow.
    if (h.dim(1) <= w.dim(1)) return ag::linear(ag::sparse_apply(adjacency, h), w, b);
    Var out = ag::sparse_apply(adjacency, ag::linear(h, w, Var{}));
    return b ? ag::add_row_bias(out, b) : out;
}

Var HanDrawer::SelfAttn::operator()(const Var& x) const {
    Var n = norm(x);
    return ag::add(x, attn(n, n));
}

Var HanDrawer::CrossAttn::operator()(const Var& q, const Var& kv) const {
    return ag::add(q, attn(norm_q(q), norm_kv(kv)));
}

Var HanDrawer::Merge::operator()(const std::vector<Var>& parts) const {
    return fc2(ag::silu(fc1(ag::concat_cols(parts))));
}

HanDrawer::SelfAttn HanDrawer::make_self(nn::ParameterStore& s, const std::string& name) const {
    return {nn::LayerNorm::make(s, name + ".norm", config_.width),
            nn::MultiHeadAttention::make(s, name + ".attn", config_.width, config_.width, config_.width, config_.heads)};
}

HanDrawer::CrossAttn HanDrawer::make_cross(nn::ParameterStore& s, const std::string& name) const {
    return {nn::LayerNorm::make(s, name + ".norm_q", config_.width), nn::LayerNorm::make(s, name + ".norm_kv", config_.width),
            nn::MultiHeadAttention::make(s, name + ".attn", config_.width, config_.width, config_.width, config_.heads)};
}

HanDrawer::HanDrawer(nn::ParameterStore& store, const std::string& prefix, HanDrawerConfig config,
                     const diffusion::TextEncoder& text, MeshGraph graph)
    : config_(config), text_(&text), graph_(std::move(graph)) {
    config_.validate();
    const int d = config_.width, g = config_.grid_down, tokens = g * g;
    const int Lt = text.config().max_tokens;
    const std::string p = prefix + ".";
    const bool with_mesh = config_.mesh_encoder != MeshEncoder::none;

    text_proj_ = nn::Linear::make(store, p + "text.proj", text.config().width, d);
    resample_text_ = &store.add(p + "text.resample", {tokens, Lt}, nn::Init::normal(1.0 / std::sqrt(Lt)));
    depth_embed_ = nn::Conv2d::make(store, p + "depth.embed", 1, d, config_.depth_patch, config_.depth_patch, 0);
    depth_pos_ = &store.add(p + "depth.pos", {tokens, d}, nn::Init::normal(0.1));
    if (with_mesh) {
        const std::string kind = config_.mesh_encoder == MeshEncoder::graph ? "gcn" : "mlp";
        int in = 3;
        for (int l = 0; l < config_.gcn_layers; ++l) {
            mesh_layers_.push_back(nn::Linear::make(store, p + "mesh." + kind + std::to_string(l), in, d));
            in = d;
        }
        mesh_group_embed_ = &store.add(p + "mesh.group_embed", {mesh::kKeypoints, d}, nn::Init::normal(0.1));
        resample_mesh_ = &store.add(p + "mesh.resample", {tokens, mesh::kKeypoints},
                                    nn::Init::normal(1.0 / std::sqrt(mesh::kKeypoints)));
    }
    bbox_scale_ = &store.add(p + "bbox.scale", {4, d}, nn::Init::normal(1.0));
    bbox_shift_ = &store.add(p + "bbox.shift", {4, d}, nn::Init::normal(0.1));
    bbox_attn_ = nn::MultiHeadAttention::make(store, p + "bbox.attn", d, d, d, config_.heads);

    for (int i = 0; i < 7; ++i) {
        if (i == 2 && !with_mesh) continue;
        sa_[static_cast<std::size_t>(i)] = make_self(store, p + "sa" + std::to_string(i + 1));
    }
    const int streams = with_mesh ? 3 : 2;
    for (int k = 0; k < streams; ++k) down_cross_[static_cast<std::size_t>(k)] = make_cross(store, p + "down.cross" + std::to_string(k));
    down_merge_ = {nn::Linear::make(store, p + "down.merge1", streams * d, d), nn::Linear::make(store, p + "down.merge2", d, d)};
    mid_cross_ = make_cross(store, p + "mid.cross");
    for (int k = 0; k < 3; ++k) up_cross_[static_cast<std::size_t>(k)] = make_cross(store, p + "up.cross" + std::to_string(k));
    up_merge_ = {nn::Linear::make(store, p + "up.merge1", 3 * d, d), nn::Linear::make(store, p + "up.merge2", d, d)};
    const int patch = config_.recon_size / g;
    dec1_ = nn::Linear::make(store, p + "decoder.fc1", d, d);
    dec2_ = nn::Linear::make(store, p + "decoder.fc2", d, 3 * patch * patch);
}

Var HanDrawer::to_grid(const Var& tokens, int g) const {
    return ag::reshape(ag::transpose2d(tokens), {tokens.dim(1), g, g});
}

Var HanDrawer::from_grid(const Var& grid) const {
    return ag::transpose2d(ag::reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2)}));
}

Var HanDrawer::encode_text(const std::vector<std::string>& tokens) const {
    return text_proj_(ag::constant(text_->encode(tokens)));
}

Var HanDrawer::encode_depth(const Tensor& hand_depth) const {
    const int S = config_.depth_size;
    if (hand_depth.rank() != 3 || hand_depth.dim(0) != 1 || hand_depth.dim(1) != S || hand_depth.dim(2) != S) {
        throw ValidationError("hand depth must be 1 x " + std::to_string(S) + " x " + std::to_string(S) + ", got " +
                              hand_depth.shape_str());
    }
    for (double v : hand_depth.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("hand depth values must lie in [0,1]");
    }
    Var grid = depth_embed_(ag::constant(hand_depth));
    return ag::add(from_grid(grid), nn::var(depth_pos_));
}

Var HanDrawer::encode_mesh(const Tensor& vertices) const {
    if (config_.mesh_encoder == MeshEncoder::none) throw ValidationError("mesh branch is disabled in this configuration");
    const int V = graph_.vertex_count();
    if (vertices.rank() != 2 || vertices.dim(0) != V || vertices.dim(1) != 3) {
        throw ValidationError("mesh encoder expects " + std::to_string(V) + " x 3 vertices, got " + vertices.shape_str());
    }
    // Centre the cloud and scale it to unit RMS radius, so the encoder sees
    // shape and orientation while position and size come from the bbox.
    Tensor x = vertices;
    double ms = 0.0;
    for (int c = 0; c < 3; ++c) {
        double m = 0.0;
        for (int v = 0; v < V; ++v) m += x.at(v, c);
        m /= V;
        for (int v = 0; v < V; ++v) {
            x.at(v, c) -= m;
            ms += x.at(v, c) * x.at(v, c);
        }
    }
    if (ms > 0.0) x *= 1.0 / std::sqrt(ms / V);
    Var h = ag::constant(std::move(x));
    const bool graph = config_.mesh_encoder == MeshEncoder::graph;
    for (std::size_t l = 0; l < mesh_layers_.size(); ++l) {
        const nn::Linear& layer = mesh_layers_[l];
        h = graph ? gcn_layer(graph_.adjacency, h, nn::var(layer.weight), nn::var(layer.bias)) : layer(h);
        if (l + 1 < mesh_layers_.size()) h = ag::silu(h);
    }
    return ag::add(ag::sparse_apply(graph_.pool, h), nn::var(mesh_group_embed_));
}

Var HanDrawer::encode_bbox(const mesh::NormalizedBBox& bbox) const {
    bbox.validate();
    const int d = config_.width;
    const double s[4] = {bbox.x0, bbox.y0, bbox.x1, bbox.y1};
    Tensor coords({4, d});
    for (int i = 0; i < 4; ++i) {
        for (int c = 0; c < d; ++c) coords.at(i, c) = s[i];
    }
    Var x = ag::add(ag::mul(ag::constant(std::move(coords)), nn::var(bbox_scale_)), nn::var(bbox_shift_));
    return ag::layer_norm(ag::add(x, bbox_attn_(x, x)), Var{}, Var{}, config_.bbox_norm_eps);
}

std::vector<Var> HanDrawer::paired(const std::array<CrossAttn, 3>& layers, const std::vector<Var>& streams,
                                   const Var& bbox) const {
    std::vector<Var> out;
    const std::size_t n = streams.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t partner = n == 3 ? static_cast<std::size_t>(config_.pairing[k]) : (k + 1) % n;
        out.push_back(layers[k](streams[k], ag::concat_rows({streams[partner], bbox})));
    }
    return out;
}

HanDrawerOutput HanDrawer::forward(const HanDrawerInputs& in) const {
    const int g = config_.grid_down;
    const bool with_mesh = config_.mesh_encoder != MeshEncoder::none;

    const Var f_t = encode_text(in.text_tokens);
    const Var f_d = encode_depth(in.hand_depth);
    const Var f_bb = encode_bbox(in.bbox);

    std::vector<Var> streams;
    streams.push_back(ag::matmul(nn::var(resample_text_), sa_[0](f_t)));
    streams.push_back(sa_[1](f_d));
    if (with_mesh) streams.push_back(ag::matmul(nn::var(resample_mesh_), sa_[2](encode_mesh(in.vertices))));

    const std::vector<Var> down = paired(down_cross_, streams, f_bb);
    const Var d_down = down_merge_(down);

    const Var mid_in = from_grid(ag::avg_pool2x(to_grid(d_down, g)));
    const Var d_mid = mid_cross_(sa_[3](mid_in), f_bb);

    const Var up_in = from_grid(ag::upsample_nearest2x(to_grid(d_mid, g / 2)));
    const std::vector<Var> up_streams = {sa_[4](up_in), sa_[5](down[0]), sa_[6](down[1])};
    const Var d_up = up_merge_(paired(up_cross_, up_streams, f_bb));

    // Each up token decodes to a P x P RGB patch.
    const int P = config_.recon_size / g, R = config_.recon_size;
    Var patches = dec2_(ag::silu(dec1_(d_up)));
    std::vector<int> index(static_cast<std::size_t>(3) * R * R);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < R; ++y) {
            for (int x = 0; x < R; ++x) {
                const int token = (y / P) * g + x / P;
                index[(static_cast<std::size_t>(c) * R + y) * R + x] = token * 3 * P * P + c * P * P + (y % P) * P + x % P;
            }
        }
    }
    Var recon = ag::sigmoid(ag::gather(patches, std::move(index), {3, R, R}));

    HanDrawerOutput out;
    out.fusion = {to_grid(d_down, g), to_grid(d_mid, g / 2), to_grid(d_up, g), in.bbox};
    out.reconstruction = recon;
    return out;
}

}  // namespace handrawer::model
