#pragma once
// Procedural hand scenes with every modality derived from one scene state:
// a textured background, a posed procedural hand rendered as a palm ellipse
// plus capsule bones, its 778-vertex mesh, a depth map from the silhouette's
// distance transform, the exact bbox, the bbox-centred crops and a caption.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "handrawer/data/sample.hpp"
#include "handrawer/mesh/procedural.hpp"

namespace handrawer::data {

// Canonical articulation of a gesture class before per-sample jitter.
struct GestureShape {
    mesh::HandPose pose;
    double rotation_deg = 0.0;  // in-plane rotation; 0 = fingers up
};
GestureShape gesture_shape(std::string_view label);

// Placement of the canonical hand frame in an image: canonical (x, y, z)
// maps to pixel (tx + s*u.x, ty - s*u.y) with u the (x, y) rotated by
// `rotation`, and depth s*z.
struct HandPlacement {
    double scale = 8.0;   // pixels per canonical unit
    double rotation = 0;  // radians
    double tx = 0, ty = 0;

    std::array<double, 3> apply(double x, double y, double z) const;
    Tensor apply(const Tensor& points) const;  // [N,3] -> [N,3]
};

struct Scene {
    Tensor image;  // [3,H,W], 8-bit levels
    Tensor depth;  // [1,H,W], 16-bit levels
    Tensor mask;   // [1,H,W], 1 on hand pixels
    mesh::HandMesh mesh;      // image-pixel coordinates
    Tensor joints_px;         // [21,2] projected joints
    mesh::NormalizedBBox bbox;  // tight box around mask pixels
    std::string background;     // caption phrase, e.g. "a red brick wall"
};

struct SceneSpec {
    int width = kImageSize, height = kImageSize;
    int gesture = 0;  // index into kGestureNames
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
};

Scene render_scene(const SceneSpec& spec);

struct SynthSample {
    MultimodalSample sample;
    Tensor joints_px;  // generator ground truth, [21,2] in image pixels
};

std::string synth_sample_id(Split split, std::uint64_t seed, std::uint64_t index);

// Sample `index` of the stream has gesture class index % 18.
SynthSample synth_sample(std::uint64_t index, std::uint64_t seed, Split split);
std::vector<SynthSample> synth_generate(int n, std::uint64_t seed, Split split);

// Writes samples under dir and a manifest.jsonl beside them; returns the
// manifest path.
std::filesystem::path write_synth(const std::filesystem::path& dir, int n, std::uint64_t seed, Split split);

// Exact Euclidean distance (pixels) from each foreground cell to the nearest
// background cell; background cells are 0.
Tensor distance_transform(const Tensor& mask);

}  // namespace handrawer::data
