#include "handrawer/mesh/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"

namespace handrawer::mesh {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'M', 'E', 'S', 'H', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void HandMesh::validate() const {
    if (vertices.rank() != 2 || vertices.dim(1) != 3 || vertices.dim(0) <= 0) {
        throw ValidationError("mesh vertices must be V x 3 with V > 0, got " + vertices.shape_str());
    }
    if (!vertices.all_finite()) throw ValidationError("mesh vertices contain non-finite coordinates");
    const int V = vertex_count();
    for (const Edge& e : edges) {
        if (e[0] < 0 || e[0] >= V || e[1] < 0 || e[1] >= V) {
            throw ValidationError("edge (" + std::to_string(e[0]) + "," + std::to_string(e[1]) +
                                  ") outside vertex range [0," + std::to_string(V) + ")");
        }
        if (e[0] == e[1]) throw ValidationError("self-loop edge at vertex " + std::to_string(e[0]));
    }
}

std::vector<Edge> normalize_edges(const std::vector<Edge>& edges) {
    std::vector<Edge> out;
    out.reserve(edges.size());
    for (const Edge& e : edges) out.push_back({std::min(e[0], e[1]), std::max(e[0], e[1])});
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void KeypointRegressor::validate() const {
    if (weights.rows != kKeypoints) {
        throw ValidationError("regressor must have " + std::to_string(kKeypoints) + " rows, got " +
                              std::to_string(weights.rows));
    }
    for (double w : weights.values) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("regressor weights must be finite and nonnegative");
    }
    for (int r = 0; r < weights.rows; ++r) {
        const double s = weights.row_sum(r);
        if (std::abs(s - 1.0) > 1e-9) {
            throw ValidationError("regressor row " + std::to_string(r) + " sums to " + std::to_string(s));
        }
    }
}

KeypointRegressor KeypointRegressor::from_dense(const Tensor& w) {
    if (w.rank() != 2) throw ValidationError("dense regressor must be rank 2");
    std::vector<SparseMatrix::Triplet> t;
    for (int r = 0; r < w.dim(0); ++r) {
        for (int c = 0; c < w.dim(1); ++c) {
            if (w.at(r, c) != 0.0) t.push_back({r, c, w.at(r, c)});
        }
    }
    KeypointRegressor reg{SparseMatrix::from_triplets(w.dim(0), w.dim(1), std::move(t))};
    reg.validate();
    return reg;
}

void NormalizedBBox::validate() const {
    for (double v : {x0, y0, x1, y1}) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw ValidationError("bbox coordinates must lie in [0,1]");
    }
    if (!(x0 < x1) || !(y0 < y1)) throw ValidationError("bbox must have positive width and height");
}

Tensor keypoints_from_vertices(const HandMesh& mesh, const KeypointRegressor& reg) {
    if (reg.vertex_count() != mesh.vertex_count()) {
        throw ValidationError("regressor has " + std::to_string(reg.vertex_count()) + " columns but mesh has " +
                              std::to_string(mesh.vertex_count()) + " vertices");
    }
    if (mesh.vertices.rank() != 2 || mesh.vertices.dim(1) != 3) {
        throw ValidationError("mesh vertices must be V x 3, got " + mesh.vertices.shape_str());
    }
    return reg.weights.apply(mesh.vertices);
}

SparseMatrix build_adjacency(const HandMesh& mesh, AdjacencyNorm norm) {
    mesh.validate();
    const int V = mesh.vertex_count();
    const std::vector<Edge> edges = normalize_edges(mesh.edges);
    std::vector<double> degree(static_cast<std::size_t>(V), 1.0);
    for (const Edge& e : edges) {
        degree[static_cast<std::size_t>(e[0])] += 1.0;
        degree[static_cast<std::size_t>(e[1])] += 1.0;
    }
    auto weight = [&](int i, int j) {
        const double di = degree[static_cast<std::size_t>(i)];
        const double dj = degree[static_cast<std::size_t>(j)];
        return norm == AdjacencyNorm::symmetric ? 1.0 / std::sqrt(di * dj) : 1.0 / di;
    };
    std::vector<SparseMatrix::Triplet> t;
    t.reserve(static_cast<std::size_t>(V) + 2 * edges.size());
    for (int i = 0; i < V; ++i) t.push_back({i, i, weight(i, i)});
    for (const Edge& e : edges) {
        t.push_back({e[0], e[1], weight(e[0], e[1])});
        t.push_back({e[1], e[0], weight(e[1], e[0])});
    }
    return SparseMatrix::from_triplets(V, V, std::move(t));
}

KeypointRegressor nearest_vertex_regressor(const Tensor& vertices, const Tensor& joints, int k) {
    const int V = vertices.dim(0);
    if (k <= 0 || k > V) throw ValidationError("regressor neighbourhood size out of range");
    std::vector<SparseMatrix::Triplet> t;
    std::vector<int> order(static_cast<std::size_t>(V));
    std::vector<double> dist(static_cast<std::size_t>(V));
    for (int j = 0; j < joints.dim(0); ++j) {
        for (int v = 0; v < V; ++v) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) d += (vertices.at(v, c) - joints.at(j, c)) * (vertices.at(v, c) - joints.at(j, c));
            dist[static_cast<std::size_t>(v)] = d;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b]; });
        for (int i = 0; i < k; ++i) t.push_back({j, order[static_cast<std::size_t>(i)], 1.0 / k});
    }
    KeypointRegressor reg{SparseMatrix::from_triplets(joints.dim(0), V, std::move(t))};
    return reg;
}

std::vector<std::uint8_t> encode_mesh_record(const HandMesh& mesh, const KeypointRegressor& reg) {
    mesh.validate();
    if (reg.vertex_count() != mesh.vertex_count()) throw ValidationError("regressor/mesh vertex count mismatch");
    io::Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(mesh.vertex_count()));
    w.u32(static_cast<std::uint32_t>(mesh.edges.size()));
    w.u32(static_cast<std::uint32_t>(reg.weights.rows));
    w.u32(static_cast<std::uint32_t>(reg.weights.nnz()));
    for (double v : mesh.vertices.values()) w.f32(static_cast<float>(v));
    for (const Edge& e : mesh.edges) {
        w.u32(static_cast<std::uint32_t>(e[0]));
        w.u32(static_cast<std::uint32_t>(e[1]));
    }
    for (int r = 0; r < reg.weights.rows; ++r) {
        for (int p = reg.weights.row_ptr[r]; p < reg.weights.row_ptr[r + 1]; ++p) {
            w.u32(static_cast<std::uint32_t>(r));
            w.u32(static_cast<std::uint32_t>(reg.weights.col_idx[p]));
            w.f64(reg.weights.values[p]);
        }
    }
    w.seal();
    return w.buffer();
}

MeshRecord decode_mesh_record(std::vector<std::uint8_t> bytes) {
    io::Reader r(std::move(bytes));
    char magic[8];
    r.bytes(magic, sizeof magic, "magic");
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError("magic", "not a mesh record");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw ParseError("version", "unsupported version " + std::to_string(version));
    const std::uint32_t V = r.u32("vertex_count");
    const std::uint32_t E = r.u32("edge_count");
    const std::uint32_t rows = r.u32("regressor_rows");
    const std::uint32_t nnz = r.u32("regressor_nnz");
    if (V == 0 || V > (1u << 24)) throw ParseError("vertex_count", "implausible value " + std::to_string(V));
    const std::size_t vertex_bytes = std::size_t{V} * 12;
    const std::size_t edge_bytes = std::size_t{E} * 8;
    const std::size_t reg_bytes = std::size_t{nnz} * 16;
    const std::size_t have = r.remaining();
    if (have < vertex_bytes) throw ParseError("vertices", "record truncated");
    if (have < vertex_bytes + edge_bytes) throw ParseError("edges", "record truncated");
    if (have < vertex_bytes + edge_bytes + reg_bytes + 4) throw ParseError("regressor", "record truncated");
    if (have != vertex_bytes + edge_bytes + reg_bytes + 4) throw ParseError("crc32", "trailing bytes after record");
    r.verify_seal("mesh record");
    MeshRecord rec;
    rec.mesh.vertices = Tensor({static_cast<int>(V), 3});
    for (double& v : rec.mesh.vertices.storage()) v = r.f32("vertices");
    rec.mesh.edges.resize(E);
    for (Edge& e : rec.mesh.edges) {
        e[0] = static_cast<int>(r.u32("edges"));
        e[1] = static_cast<int>(r.u32("edges"));
    }
    std::vector<SparseMatrix::Triplet> t(nnz);
    for (auto& tr : t) {
        tr.row = static_cast<int>(r.u32("regressor"));
        tr.col = static_cast<int>(r.u32("regressor"));
        tr.value = r.f64("regressor");
    }
    rec.mesh.validate();
    rec.regressor.weights = SparseMatrix::from_triplets(static_cast<int>(rows), static_cast<int>(V), std::move(t));
    rec.regressor.validate();
    return rec;
}

void save_mesh_record(const std::filesystem::path& path, const HandMesh& mesh, const KeypointRegressor& reg) {
    io::write_file_atomic(path, encode_mesh_record(mesh, reg));
}

MeshRecord load_mesh_record(const std::filesystem::path& path) { return decode_mesh_record(io::read_file(path)); }

HandMesh load_face_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open face file '" + path.string() + "'");
    std::vector<double> coords;
    std::vector<Edge> edges;
    std::string line;
    int line_no = 0;
    auto index_of = [&](const std::string& token) {
        const std::string head = token.substr(0, token.find('/'));
        try {
            return std::stoi(head) - 1;
        } catch (const std::exception&) {
            throw ParseError("face", "line " + std::to_string(line_no) + ": bad index '" + token + "'");
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ss >> x >> y >> z)) throw ParseError("vertex", "line " + std::to_string(line_no) + " needs 3 coordinates");
            coords.insert(coords.end(), {x, y, z});
        } else if (tag == "f") {
            std::vector<int> face;
            std::string tok;
            while (ss >> tok) face.push_back(index_of(tok));
            if (face.size() < 3) throw ParseError("face", "line " + std::to_string(line_no) + " has fewer than 3 indices");
            for (std::size_t i = 0; i < face.size(); ++i) edges.push_back({face[i], face[(i + 1) % face.size()]});
        }
    }
    HandMesh m;
    const int V = static_cast<int>(coords.size() / 3);
    m.vertices = Tensor({V, 3}, std::move(coords));
    m.edges = normalize_edges(edges);
    m.validate();
    return m;
}

}  // namespace handrawer::mesh
