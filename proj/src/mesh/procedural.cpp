#include "handrawer/mesh/procedural.hpp"

#include <cmath>
#include <numbers>

#include "handrawer/core/errors.hpp"

namespace handrawer::mesh {

namespace {

constexpr int kRing = 8;
constexpr int kWristVerts = 2 * kRing;
constexpr int kFingerRings = 10;
constexpr int kFingerVerts = kFingerRings * kRing + 1;
constexpr int kPalmRows = 21;
constexpr int kPalmCols = 17;
constexpr int kPalmStart = kWristVerts + 5 * kFingerVerts;
static_assert(kPalmStart + kPalmRows * kPalmCols == kManoVertices);

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kSheetDepth = 1.2;

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
Vec3 normalize(Vec3 a) {
    const double n = std::sqrt(dot(a, a));
    if (n < 1e-12) throw ValidationError("degenerate direction in hand skeleton");
    return (1.0 / n) * a;
}

Vec3 joint(const Tensor& j, int i) { return {j.at(i, 0), j.at(i, 1), j.at(i, 2)}; }
void put(Tensor& v, int i, Vec3 p) {
    v.at(i, 0) = p.x;
    v.at(i, 1) = p.y;
    v.at(i, 2) = p.z;
}

// Rest-pose layout of the four long fingers (index..little) and the thumb.
constexpr double kMcpX[4] = {-3.0, -1.0, 1.0, 3.0};
constexpr double kMcpY[4] = {8.0, 8.3, 8.0, 7.4};
constexpr double kFingerScale[4] = {1.0, 1.1, 1.0, 0.8};
constexpr double kFingerBones[3] = {4.0, 2.5, 2.0};
constexpr double kFingerFlex[3] = {80.0, 100.0, 70.0};
constexpr Vec3 kThumbCmc{-2.6, 2.2, 0.0};
constexpr double kThumbBones[3] = {3.2, 2.8, 2.4};
constexpr double kThumbFlex[3] = {25.0, 55.0, 70.0};

Vec3 rotate_in_palm(Vec3 d, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * d.x - s * d.y, s * d.x + c * d.y, d.z};
}

struct Chain {
    Vec3 base;
    Vec3 dir;      // rest direction of the first bone
    Vec3 bend;     // unit vector the chain curls toward, orthogonal to dir
    const double* bones;
    const double* flex;
    double scale;
};

Chain chain_for(const HandPose& pose, int finger) {
    if (finger == 0) {
        Vec3 d0 = rotate_in_palm(normalize({-0.75, 0.66, 0.0}), pose.spread[0]);
        const double a = std::clamp(pose.thumb_across, 0.0, 1.0);
        d0 = normalize((1.0 - a) * d0 + a * normalize({0.8, 0.35, 0.5}));
        Vec3 n{0.55, 0.25, 0.8};
        n = normalize(n - dot(n, d0) * d0);
        return {kThumbCmc, d0, n, kThumbBones, kThumbFlex, 1.0};
    }
    const int i = finger - 1;
    const Vec3 d0 = rotate_in_palm({0.0, 1.0, 0.0}, pose.spread[static_cast<std::size_t>(finger)]);
    return {{kMcpX[i], kMcpY[i], 0.0}, d0, {0.0, 0.0, 1.0}, kFingerBones, kFingerFlex, kFingerScale[i]};
}

}  // namespace

double finger_radius(int finger) {
    static constexpr double r[5] = {0.8, 0.7, 0.7, 0.7, 0.6};
    return r[finger];
}

Tensor pose_joints(const HandPose& pose) {
    Tensor j({kKeypoints, 3});
    put(j, 0, {0.0, 0.0, 0.0});
    for (int f = 0; f < 5; ++f) {
        const Chain c = chain_for(pose, f);
        const double curl = std::clamp(pose.curl[static_cast<std::size_t>(f)], 0.0, 1.0);
        Vec3 p = c.base;
        put(j, 1 + 4 * f, p);
        double angle = 0.0;
        for (int b = 0; b < 3; ++b) {
            angle += curl * c.flex[b] * kDeg;
            const Vec3 d = std::cos(angle) * c.dir + std::sin(angle) * c.bend;
            p = p + (c.bones[b] * c.scale) * d;
            put(j, 2 + 4 * f + b, p);
        }
    }
    return j;
}

namespace {

// Lateral axis of each chain: perpendicular to its curl plane, so rings stay
// untwisted through flexion.
std::array<Vec3, 5> chain_laterals(const Tensor& joints) {
    const Vec3 up = normalize(joint(joints, 9) - joint(joints, 0));
    Vec3 across = joint(joints, 17) - joint(joints, 5);
    across = normalize(across - dot(across, up) * up);
    const Vec3 normal = cross(across, up);
    std::array<Vec3, 5> out{};
    for (int f = 0; f < 5; ++f) {
        const Vec3 b0 = normalize(joint(joints, 2 + 4 * f) - joint(joints, 1 + 4 * f));
        const Vec3 b2 = normalize(joint(joints, 4 + 4 * f) - joint(joints, 3 + 4 * f));
        Vec3 l = cross(b0, b2);
        if (dot(l, l) < 1e-6) l = cross(b0, normal);
        out[static_cast<std::size_t>(f)] = normalize(l);
    }
    return out;
}

void put_ring(Tensor& v, int start, Vec3 center, Vec3 axis, Vec3 lateral, double r) {
    const Vec3 u = normalize(lateral - dot(lateral, axis) * axis);
    const Vec3 w = cross(axis, u);
    for (int k = 0; k < kRing; ++k) {
        const double th = 2.0 * std::numbers::pi * k / kRing;
        put(v, start + k, center + r * (std::cos(th) * u + std::sin(th) * w));
    }
}

}  // namespace

Tensor build_vertices(const Tensor& joints) {
    if (joints.rank() != 2 || joints.dim(0) != kKeypoints || joints.dim(1) != 3) {
        throw ValidationError("expected 21 x 3 joints, got " + joints.shape_str());
    }
    Tensor v({kManoVertices, 3});
    const Vec3 wrist = joint(joints, 0);
    const Vec3 up = normalize(joint(joints, 9) - wrist);
    Vec3 across = joint(joints, 17) - joint(joints, 5);
    across = normalize(across - dot(across, up) * up);
    const Vec3 normal = cross(across, up);

    put_ring(v, 0, wrist, up, across, kWristRadius);
    put_ring(v, kRing, wrist - 1.5 * up, up, across, kWristRadius);

    const auto laterals = chain_laterals(joints);
    for (int f = 0; f < 5; ++f) {
        const int base = kWristVerts + f * kFingerVerts;
        const double r = finger_radius(f);
        Vec3 j[4];
        for (int k = 0; k < 4; ++k) j[k] = joint(joints, 1 + 4 * f + k);
        Vec3 bone[3];
        for (int b = 0; b < 3; ++b) bone[b] = normalize(j[b + 1] - j[b]);
        const Vec3 lat = laterals[static_cast<std::size_t>(f)];
        int ring = 0;
        for (int k = 0; k < 4; ++k) {
            const Vec3 in = bone[std::max(k - 1, 0)];
            const Vec3 out = bone[std::min(k, 2)];
            put_ring(v, base + kRing * ring++, j[k], normalize(in + out), lat, r);
            if (k == 3) break;
            for (int s = 1; s <= 2; ++s) {
                put_ring(v, base + kRing * ring++, j[k] + (s / 3.0) * (j[k + 1] - j[k]), bone[k], lat, r);
            }
        }
        put(v, base + kFingerRings * kRing, j[3] + (1.5 * r) * bone[2]);
    }

    // Dorsal palm sheet, bilinear over a quad expressed in the palm frame.
    const double corners[4][2] = {{-3.0, 1.8}, {3.0, 1.8}, {-3.6, 7.4}, {3.6, 6.9}};
    for (int row = 0; row < kPalmRows; ++row) {
        const double t = static_cast<double>(row) / (kPalmRows - 1);
        for (int col = 0; col < kPalmCols; ++col) {
            const double s = static_cast<double>(col) / (kPalmCols - 1);
            const double px = (1 - t) * ((1 - s) * corners[0][0] + s * corners[1][0]) +
                              t * ((1 - s) * corners[2][0] + s * corners[3][0]);
            const double py = (1 - t) * ((1 - s) * corners[0][1] + s * corners[1][1]) +
                              t * ((1 - s) * corners[2][1] + s * corners[3][1]);
            put(v, kPalmStart + row * kPalmCols + col, wrist + px * across + py * up - kSheetDepth * normal);
        }
    }
    return v;
}

namespace {

HandTopology make_topology() {
    HandTopology topo;
    topo.rest_joints = pose_joints(HandPose{});
    topo.rest_vertices = build_vertices(topo.rest_joints);
    const Tensor& rv = topo.rest_vertices;
    auto& e = topo.edges;

    auto ring_cycle = [&](int start) {
        for (int k = 0; k < kRing; ++k) e.push_back({start + k, start + (k + 1) % kRing});
    };
    auto ring_bridge = [&](int a, int b) {
        for (int k = 0; k < kRing; ++k) {
            e.push_back({a + k, b + k});
            e.push_back({a + k, b + (k + 1) % kRing});
        }
    };
    auto nearest_sheet = [&](int vtx) {
        int best = kPalmStart;
        double bd = 1e300;
        for (int p = kPalmStart; p < kManoVertices; ++p) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) d += (rv.at(vtx, c) - rv.at(p, c)) * (rv.at(vtx, c) - rv.at(p, c));
            if (d < bd) {
                bd = d;
                best = p;
            }
        }
        return best;
    };

    ring_cycle(0);
    ring_cycle(kRing);
    ring_bridge(kRing, 0);
    for (int k = 0; k < kRing; ++k) e.push_back({k, nearest_sheet(k)});
    for (int f = 0; f < 5; ++f) {
        const int base = kWristVerts + f * kFingerVerts;
        for (int r = 0; r < kFingerRings; ++r) {
            ring_cycle(base + r * kRing);
            if (r + 1 < kFingerRings) ring_bridge(base + r * kRing, base + (r + 1) * kRing);
        }
        const int apex = base + kFingerRings * kRing;
        for (int k = 0; k < kRing; ++k) e.push_back({base + (kFingerRings - 1) * kRing + k, apex});
        for (int k = 0; k < kRing; ++k) e.push_back({base + k, nearest_sheet(base + k)});
    }
    for (int row = 0; row < kPalmRows; ++row) {
        for (int col = 0; col < kPalmCols; ++col) {
            const int p = kPalmStart + row * kPalmCols + col;
            if (col + 1 < kPalmCols) e.push_back({p, p + 1});
            if (row + 1 < kPalmRows) e.push_back({p, p + kPalmCols});
            if (col + 1 < kPalmCols && row + 1 < kPalmRows) e.push_back({p, p + kPalmCols + 1});
        }
    }
    e = normalize_edges(e);

    topo.regressor = nearest_vertex_regressor(rv, topo.rest_joints, kRing);
    topo.regressor.validate();

    topo.vertex_group.resize(kManoVertices);
    for (int v = 0; v < kManoVertices; ++v) {
        int best = 0;
        double bd = 1e300;
        for (int j = 0; j < kKeypoints; ++j) {
            double d = 0.0;
            for (int c = 0; c < 3; ++c) d += (rv.at(v, c) - topo.rest_joints.at(j, c)) * (rv.at(v, c) - topo.rest_joints.at(j, c));
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        topo.vertex_group[static_cast<std::size_t>(v)] = best;
    }
    return topo;
}

}  // namespace

const HandTopology& procedural_topology() {
    static const HandTopology topo = make_topology();
    return topo;
}

HandMesh procedural_mesh(const HandPose& pose) {
    HandMesh m;
    m.vertices = build_vertices(pose_joints(pose));
    m.edges = procedural_topology().edges;
    return m;
}

}  // namespace handrawer::mesh
