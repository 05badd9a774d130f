#pragma once
// Hand mesh representation, keypoint regression and the adjacency used by the
// graph encoder.
//
// Keypoint ordering (21 joints):
//   0 wrist
//   1-4   thumb  (carpometacarpal, metacarpophalangeal, interphalangeal, tip)
//   5-8   index  (metacarpophalangeal, proximal, distal interphalangeal, tip)
//   9-12  middle (same order)
//   13-16 ring
//   17-20 little
// Mesh annotators differ in this ordering; convert before loading their output.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "handrawer/core/sparse.hpp"
#include "handrawer/core/tensor.hpp"

namespace handrawer::mesh {

inline constexpr int kKeypoints = 21;
inline constexpr int kManoVertices = 778;

using Edge = std::array<int, 2>;

struct HandMesh {
    Tensor vertices;  // [V, 3]
    std::vector<Edge> edges;

    int vertex_count() const { return vertices.empty() ? 0 : vertices.dim(0); }
    // Throws ValidationError on out-of-range indices, self loops or
    // non-finite coordinates.
    void validate() const;
};

// Sorted, deduplicated (low, high) pairs; the undirected closure of `edges`.
std::vector<Edge> normalize_edges(const std::vector<Edge>& edges);

struct KeypointRegressor {
    SparseMatrix weights;  // [21, V], rows nonnegative and summing to 1

    int vertex_count() const { return weights.cols; }
    void validate() const;
    static KeypointRegressor from_dense(const Tensor& w);  // [21, V]
};

struct NormalizedBBox {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

    void validate() const;
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    bool operator==(const NormalizedBBox&) const = default;
};

// p_i = sum_j w_ij v_j, returned as [21, 3].
Tensor keypoints_from_vertices(const HandMesh& mesh, const KeypointRegressor& reg);

enum class AdjacencyNorm { symmetric, row };

// D^-1/2 (A+I) D^-1/2 (symmetric) or D^-1 (A+I) (row), V x V.
SparseMatrix build_adjacency(const HandMesh& mesh, AdjacencyNorm norm);

// Uniform weights over the k vertices nearest each joint ([21, 3] joints).
KeypointRegressor nearest_vertex_regressor(const Tensor& vertices, const Tensor& joints, int k = 8);

// ---- mesh record files ----

struct MeshRecord {
    HandMesh mesh;
    KeypointRegressor regressor;
};

std::vector<std::uint8_t> encode_mesh_record(const HandMesh& mesh, const KeypointRegressor& reg);
// Parses and validates the whole record before returning; nothing partial
// escapes on error.
MeshRecord decode_mesh_record(std::vector<std::uint8_t> bytes);
void save_mesh_record(const std::filesystem::path& path, const HandMesh& mesh, const KeypointRegressor& reg);
MeshRecord load_mesh_record(const std::filesystem::path& path);

// Reads `v x y z` and `f a b c` lines (1-based, `a/b/c` forms accepted) from
// a Wavefront-style face file, e.g. an exported MANO template.
HandMesh load_face_file(const std::filesystem::path& path);

}  // namespace handrawer::mesh
