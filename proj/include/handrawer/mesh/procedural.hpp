#pragma once
// Procedural 778-vertex hand: capsule-ring fingers on a palm sheet, built
// around 21 articulated joints. The topology (edges, regressor, vertex
// groups) is fixed; only vertex positions depend on the pose.
//
// Vertex layout:
//   [0, 16)    wrist, 2 rings of 8 (ring 0 sits on the wrist joint)
//   [16, 421)  5 fingers x 81: 10 rings of 8 along the chain, then a tip apex
//   [421, 778) palm sheet, 21 rows x 17 columns on the dorsal side
// Every joint carries its own ring of 8 vertices centred on it, so the
// default 8-nearest regressor returns each joint exactly in every pose.

#include <array>

#include "handrawer/core/tensor.hpp"
#include "handrawer/mesh/mesh.hpp"

namespace handrawer::mesh {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// Canonical frame: wrist at the origin, fingers along +y, palm facing +z.
struct HandPose {
    std::array<double, 5> curl{};   // 0 straight .. 1 fully flexed, thumb first
    std::array<double, 5> spread{}; // radians of in-plane splay per finger
    double thumb_across = 0.0;      // thumb adduction over the palm, 0..1
};

struct HandTopology {
    std::vector<Edge> edges;
    KeypointRegressor regressor;
    std::vector<int> vertex_group;  // joint index per vertex, nearest in the rest pose
    Tensor rest_vertices;           // [778, 3]
    Tensor rest_joints;             // [21, 3]
};

// Joint positions [21, 3] for a pose in the canonical frame.
Tensor pose_joints(const HandPose& pose);

// Vertex positions [778, 3] around the given joints.
Tensor build_vertices(const Tensor& joints);

const HandTopology& procedural_topology();

HandMesh procedural_mesh(const HandPose& pose);

// Finger tube radius per chain (thumb first) and wrist ring radius.
double finger_radius(int finger);
inline constexpr double kWristRadius = 1.2;

}  // namespace handrawer::mesh
