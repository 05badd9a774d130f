#include <filesystem>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/mesh/mesh.hpp"
#include "handrawer/mesh/procedural.hpp"
#include "test_support.hpp"

using namespace handrawer;
using namespace handrawer::mesh;
using testing_support::random_tensor;

namespace {

HandMesh random_mesh(int V, std::uint64_t seed) {
    HandMesh m;
    m.vertices = random_tensor({V, 3}, seed, -5.0, 5.0);
    CounterRng rng(seed, {2});
    for (int i = 1; i < V; ++i) m.edges.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(i))), i});
    return m;
}

KeypointRegressor random_regressor(int V, std::uint64_t seed) {
    Tensor w({kKeypoints, V});
    CounterRng rng(seed, {3});
    for (int r = 0; r < kKeypoints; ++r) {
        double s = 0.0;
        for (int c = 0; c < V; ++c) s += (w.at(r, c) = rng.uniform());
        for (int c = 0; c < V; ++c) w.at(r, c) /= s;
    }
    return KeypointRegressor::from_dense(w);
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "handrawer_mesh_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("keypoints match a triple loop oracle") {
    auto mesh = random_mesh(10, 1);
    auto reg = random_regressor(10, 2);
    auto p = keypoints_from_vertices(mesh, reg);
    auto dense = reg.weights.to_dense();
    double worst = 0.0;
    for (int i = 0; i < kKeypoints; ++i) {
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int j = 0; j < 10; ++j) s += dense.at(i, j) * mesh.vertices.at(j, c);
            worst = std::max(worst, std::abs(s - p.at(i, c)));
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("one-hot regressor rows select vertices exactly") {
    auto mesh = random_mesh(30, 3);
    Tensor w({kKeypoints, 30});
    for (int i = 0; i < kKeypoints; ++i) w.at(i, (7 * i) % 30) = 1.0;
    auto p = keypoints_from_vertices(mesh, KeypointRegressor::from_dense(w));
    for (int i = 0; i < kKeypoints; ++i) {
        for (int c = 0; c < 3; ++c) CHECK(p.at(i, c) == mesh.vertices.at((7 * i) % 30, c));
    }
}

TEST_CASE("translation moves every keypoint by the same vector") {
    auto mesh = random_mesh(12, 4);
    auto reg = random_regressor(12, 5);
    auto p0 = keypoints_from_vertices(mesh, reg);
    const double d[3] = {0.5, -2.0, 3.25};
    for (int v = 0; v < 12; ++v) {
        for (int c = 0; c < 3; ++c) mesh.vertices.at(v, c) += d[c];
    }
    auto p1 = keypoints_from_vertices(mesh, reg);
    for (int i = 0; i < kKeypoints; ++i) {
        for (int c = 0; c < 3; ++c) CHECK(std::abs(p1.at(i, c) - p0.at(i, c) - d[c]) < 1e-12);
    }
}

TEST_CASE("keypoint regression is linear and permutation invariant") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto a = random_mesh(15, seed), b = random_mesh(15, seed + 100);
        auto reg = random_regressor(15, seed + 200);
        const double alpha = 0.3 + static_cast<double>(seed), beta = -1.7;
        HandMesh mix = a;
        for (std::size_t i = 0; i < mix.vertices.size(); ++i) mix.vertices[i] = alpha * a.vertices[i] + beta * b.vertices[i];
        auto pa = keypoints_from_vertices(a, reg), pb = keypoints_from_vertices(b, reg);
        auto pm = keypoints_from_vertices(mix, reg);
        for (std::size_t i = 0; i < pm.size(); ++i) {
            CHECK(std::abs(pm[i] - (alpha * pa[i] + beta * pb[i])) < 1e-12 * (1.0 + std::abs(pm[i])));
        }

        std::vector<int> perm(15);
        std::iota(perm.begin(), perm.end(), 0);
        CounterRng rng(seed, {9});
        for (int i = 14; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
        HandMesh pmesh = a;
        Tensor dense = reg.weights.to_dense(), pdense({kKeypoints, 15});
        for (int v = 0; v < 15; ++v) {
            for (int c = 0; c < 3; ++c) pmesh.vertices.at(perm[v], c) = a.vertices.at(v, c);
            for (int r = 0; r < kKeypoints; ++r) pdense.at(r, perm[v]) = dense.at(r, v);
        }
        auto pp = keypoints_from_vertices(pmesh, KeypointRegressor::from_dense(pdense));
        CHECK(max_abs_diff(pp, pa) < 1e-12);
    }
}

TEST_CASE("dimension mismatch is rejected") {
    auto mesh = random_mesh(10, 1);
    auto reg = random_regressor(11, 2);
    CHECK_THROWS_AS(keypoints_from_vertices(mesh, reg), ValidationError);
}

TEST_CASE("adjacency of tiny graphs") {
    HandMesh one;
    one.vertices = Tensor({1, 3});
    auto a1 = build_adjacency(one, AdjacencyNorm::symmetric).to_dense();
    CHECK(a1.size() == 1);
    CHECK(a1[0] == 1.0);

    HandMesh two;
    two.vertices = Tensor({2, 3});
    two.edges = {{0, 1}};
    auto a2 = build_adjacency(two, AdjacencyNorm::symmetric).to_dense();
    // Degrees including the self loop are 2, so every entry is 1/sqrt(2*2).
    for (double v : a2.values()) CHECK(v == doctest::Approx(1.0 / std::sqrt(2.0 * 2.0)).epsilon(1e-15));

    HandMesh path;
    path.vertices = Tensor({3, 3});
    path.edges = {{0, 1}, {2, 1}};
    auto a3 = build_adjacency(path, AdjacencyNorm::row);
    for (int r = 0; r < 3; ++r) CHECK(std::abs(a3.row_sum(r) - 1.0) < 1e-12);
}

TEST_CASE("symmetric adjacency is symmetric on the procedural hand") {
    const auto& topo = procedural_topology();
    HandMesh m = procedural_mesh(HandPose{});
    auto a = build_adjacency(m, AdjacencyNorm::symmetric).to_dense();
    double worst = 0.0;
    for (int i = 0; i < a.dim(0); ++i) {
        for (int j = 0; j < i; ++j) worst = std::max(worst, std::abs(a.at(i, j) - a.at(j, i)));
    }
    CHECK(worst < 1e-12);
    CHECK(static_cast<int>(topo.vertex_group.size()) == kManoVertices);
}

TEST_CASE("procedural hand has 778 vertices, a connected graph and a valid regressor") {
    const auto& topo = procedural_topology();
    HandMesh m = procedural_mesh(HandPose{});
    CHECK(m.vertex_count() == kManoVertices);
    m.validate();
    topo.regressor.validate();

    std::vector<int> parent(kManoVertices);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (const auto& e : topo.edges) parent[find(e[0])] = find(e[1]);
    int roots = 0;
    for (int v = 0; v < kManoVertices; ++v) roots += find(v) == v;
    CHECK(roots == 1);

    std::vector<int> group_size(kKeypoints);
    for (int g : topo.vertex_group) group_size[g] += 1;
    for (int s : group_size) CHECK(s >= 8);
}

TEST_CASE("each joint's eight nearest rest vertices are strictly closer than the ninth") {
    const auto& topo = procedural_topology();
    for (int j = 0; j < kKeypoints; ++j) {
        std::vector<double> d;
        for (int v = 0; v < kManoVertices; ++v) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                s += std::pow(topo.rest_vertices.at(v, c) - topo.rest_joints.at(j, c), 2);
            }
            d.push_back(s);
        }
        std::sort(d.begin(), d.end());
        CHECK(d[7] < d[8] * 0.999);
    }
}

TEST_CASE("regressed keypoints recover joints in articulated poses") {
    const auto& topo = procedural_topology();
    for (int trial = 0; trial < 25; ++trial) {
        CounterRng rng(11, {static_cast<std::uint64_t>(trial)});
        HandPose pose;
        for (int f = 0; f < 5; ++f) {
            pose.curl[f] = rng.uniform();
            pose.spread[f] = 0.3 * (rng.uniform() - 0.5);
        }
        pose.thumb_across = rng.uniform();
        Tensor joints = pose_joints(pose);
        HandMesh m;
        m.vertices = build_vertices(joints);
        m.edges = topo.edges;
        auto p = keypoints_from_vertices(m, topo.regressor);
        CHECK(max_abs_diff(p, joints) < 1e-12);
    }
}

TEST_CASE("mesh record round trip") {
    auto mesh = random_mesh(40, 8);
    for (double& v : mesh.vertices.storage()) v = static_cast<float>(v);
    Tensor w({kKeypoints, 40});
    for (int i = 0; i < kKeypoints; ++i) {
        w.at(i, i) = 0.25;
        w.at(i, i + 1) = 0.75;
    }
    auto reg = KeypointRegressor::from_dense(w);
    auto path = temp_path("roundtrip.hdmesh");
    save_mesh_record(path, mesh, reg);
    auto rec = load_mesh_record(path);
    CHECK(bit_equal(rec.mesh.vertices, mesh.vertices));
    CHECK(rec.mesh.edges == mesh.edges);
    CHECK(bit_equal(rec.regressor.weights.to_dense(), reg.weights.to_dense()));

    const auto& topo = procedural_topology();
    auto hand = procedural_mesh(HandPose{});
    auto hand_rec = decode_mesh_record(encode_mesh_record(hand, topo.regressor));
    CHECK(hand_rec.mesh.vertex_count() == kManoVertices);
    CHECK(max_abs_diff(hand_rec.mesh.vertices, hand.vertices) < 1e-5);
}

TEST_CASE("malformed mesh records are rejected with the offending field") {
    auto mesh = random_mesh(10, 1);
    Tensor w({kKeypoints, 10});
    for (int i = 0; i < kKeypoints; ++i) w.at(i, i % 10) = 1.0;
    auto reg = KeypointRegressor::from_dense(w);
    auto bytes = encode_mesh_record(mesh, reg);

    auto truncated = bytes;
    truncated.resize(40);
    try {
        decode_mesh_record(truncated);
        FAIL("expected parse error");
    } catch (const ParseError& e) {
        CHECK(e.field() == "vertices");
    }

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_mesh_record(bad_magic), ParseError);

    auto flipped = bytes;
    flipped[30] ^= 0x40;
    CHECK_THROWS_AS(decode_mesh_record(flipped), IntegrityError);

    // An out-of-range edge written into an otherwise well-formed record.
    io::Writer wr;
    const std::size_t edge_offset = 8 + 4 * 5 + 10 * 12;
    std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 4);
    const std::uint32_t bad = 99;
    std::memcpy(body.data() + edge_offset, &bad, 4);
    wr.bytes(body.data(), body.size());
    wr.seal();
    CHECK_THROWS_AS(decode_mesh_record(wr.buffer()), ValidationError);

    HandMesh loop = mesh;
    loop.edges.push_back({3, 3});
    CHECK_THROWS_AS(loop.validate(), ValidationError);
}

TEST_CASE("face file loader builds an undirected edge list") {
    auto path = temp_path("tri.obj");
    {
        std::ofstream out(path);
        out << "# two triangles\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2/1/1 4/1/1 3/1/1\n";
    }
    auto m = load_face_file(path);
    CHECK(m.vertex_count() == 4);
    CHECK(m.edges.size() == 5);
    {
        std::ofstream out(path);
        out << "v 0 0 0\nf 1 2\n";
    }
    CHECK_THROWS_AS(load_face_file(path), ParseError);
}
