#include "handrawer/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/data/gestures.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/raster.hpp"

namespace handrawer::data {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct ShapeRow {
    std::string_view label;
    std::array<double, 5> curl;
    std::array<double, 5> spread;
    double across;
    double rotation;
};

constexpr std::array<double, 5> kFan = {0.0, 0.16, 0.0, -0.12, -0.28};
constexpr std::array<double, 5> kWide = {0.25, 0.28, 0.02, -0.22, -0.45};
constexpr std::array<double, 5> kClosed = {-0.25, 0.0, 0.0, 0.0, 0.0};

constexpr std::array<ShapeRow, kGestureCount> kShapes = {{
    {"call", {0, 1, 1, 1, 0}, kWide, 0.0, -15},
    {"dislike", {0, 1, 1, 1, 1}, kFan, 0.0, 180},
    {"fist", {1, 1, 1, 1, 1}, kFan, 1.0, 0},
    {"four", {1, 0, 0, 0, 0}, kFan, 1.0, 0},
    {"like", {0, 1, 1, 1, 1}, kFan, 0.0, 0},
    {"mute", {0.6, 0, 1, 1, 1}, kClosed, 0.5, 0},
    {"ok", {0.55, 0.65, 0, 0, 0}, kWide, 0.3, 0},
    {"one", {1, 0, 1, 1, 1}, kFan, 1.0, 0},
    {"palm", {0, 0, 0, 0, 0}, kWide, 0.0, 0},
    {"peace", {1, 0, 0, 1, 1}, {0.0, 0.3, -0.18, 0.0, 0.0}, 1.0, 0},
    {"peace_inverted", {1, 0, 0, 1, 1}, {0.0, 0.3, -0.18, 0.0, 0.0}, 1.0, 180},
    {"rock", {1, 0, 1, 1, 0}, {0.0, 0.1, 0.0, 0.0, -0.3}, 1.0, 0},
    {"stop", {0, 0, 0, 0, 0}, kClosed, 0.0, 0},
    {"stop_inverted", {0, 0, 0, 0, 0}, kClosed, 0.0, 180},
    {"three", {1, 0, 0, 0, 1}, kFan, 1.0, 0},
    {"three2", {0, 0, 0, 1, 1}, kFan, 0.0, 0},
    {"two_up", {1, 0, 0, 1, 1}, kClosed, 1.0, 0},
    {"two_up_inverted", {1, 0, 0, 1, 1}, kClosed, 1.0, 180},
}};

struct Rgb {
    double r, g, b;
};

struct NamedColor {
    std::string_view name;
    Rgb rgb;
};

constexpr std::array<NamedColor, 8> kColors = {{{"red", {0.72, 0.22, 0.18}},
                                                {"blue", {0.2, 0.33, 0.7}},
                                                {"green", {0.25, 0.55, 0.3}},
                                                {"grey", {0.5, 0.5, 0.52}},
                                                {"yellow", {0.85, 0.75, 0.3}},
                                                {"brown", {0.5, 0.34, 0.2}},
                                                {"white", {0.88, 0.88, 0.86}},
                                                {"purple", {0.45, 0.28, 0.6}}}};

constexpr std::array<std::string_view, 5> kSurfaces = {"wooden wall", "brick wall", "plain wall", "tiled wall",
                                                       "curtain"};

constexpr std::array<Rgb, 5> kSkin = {{{0.94, 0.78, 0.66}, {0.86, 0.66, 0.5}, {0.72, 0.52, 0.38},
                                       {0.55, 0.38, 0.26}, {0.4, 0.27, 0.18}}};

struct P2 {
    double x, y;
};

double segment_distance(P2 p, P2 a, P2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

struct Capsule {
    P2 a, b;
    double r;
};

// Canonical-frame 2-D primitives of the posed hand.
struct Silhouette {
    std::vector<Capsule> capsules;
    P2 palm_centre{0.0, 4.2};
    double palm_a = 3.9, palm_b = 4.6;

    // Height in [0,1] of the covering primitive (cylindrical shading), or a
    // negative value outside the hand.
    double height(P2 p) const {
        double best = -1.0;
        const double ex = (p.x - palm_centre.x) / palm_a, ey = (p.y - palm_centre.y) / palm_b;
        const double q = ex * ex + ey * ey;
        if (q <= 1.0) best = std::sqrt(1.0 - q);
        for (const auto& c : capsules) {
            const double d = segment_distance(p, c.a, c.b);
            if (d <= c.r) best = std::max(best, std::sqrt(1.0 - (d / c.r) * (d / c.r)));
        }
        return best;
    }
};

Silhouette silhouette(const Tensor& joints) {
    Silhouette s;
    auto j2 = [&](int i) { return P2{joints.at(i, 0), joints.at(i, 1)}; };
    s.capsules.push_back({j2(0), {0.0, -1.5}, mesh::kWristRadius});
    for (int f = 0; f < 5; ++f) {
        const double r = mesh::finger_radius(f);
        for (int b = 0; b < 3; ++b) s.capsules.push_back({j2(1 + 4 * f + b), j2(2 + 4 * f + b), r});
    }
    s.capsules.push_back({j2(0), j2(1), mesh::finger_radius(0)});
    return s;
}

Rgb background_pixel(int kind, Rgb base, double x, double y, const std::array<double, 4>& phase) {
    double t = 0.0;
    switch (kind) {
        case 0:  // wood grain
            t = 0.12 * std::sin(0.045 * x + 3.0 * std::sin(0.011 * y + phase[0])) + 0.04 * std::sin(0.3 * x + phase[1]);
            break;
        case 1: {  // bricks
            const int row = static_cast<int>(std::floor((y + phase[0] * 10) / 28.0));
            const double off = (row % 2) * 30.0;
            const double bx = std::fmod(x + off + phase[1] * 10 + 600.0, 60.0);
            const double by = std::fmod(y + phase[0] * 10 + 560.0, 28.0);
            t = (bx < 4.0 || by < 4.0) ? 0.3 : -0.05 * std::sin(row * 1.7 + phase[2]);
            break;
        }
        case 2:  // plain with soft light falloff
            t = -0.15 * ((x - 250) * (x - 250) + (y - 200) * (y - 200)) / 250000.0 + 0.02 * std::sin(phase[0]);
            break;
        case 3: {  // tiles
            const int cx = static_cast<int>(std::floor((x + phase[0] * 20) / 48.0));
            const int cy = static_cast<int>(std::floor((y + phase[1] * 20) / 48.0));
            t = ((cx + cy) % 2 == 0) ? 0.08 : -0.08;
            break;
        }
        default:  // curtain folds
            t = 0.14 * std::sin(0.07 * x + 0.6 * std::sin(0.02 * y + phase[0]) + phase[1]);
            break;
    }
    t += 0.1 * (y / 512.0 - 0.5) * std::cos(phase[3]);
    return {std::clamp(base.r + t, 0.0, 1.0), std::clamp(base.g + t, 0.0, 1.0), std::clamp(base.b + t, 0.0, 1.0)};
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas). Foreground cells carry kFar instead of infinity.
constexpr double kFar = 1e20;

void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    auto at = [](auto& vec, int i) -> auto& { return vec[static_cast<std::size_t>(i)]; };
    auto cross = [&](int q, int p) { return ((at(f, q) + q * q) - (at(f, p) + p * p)) / (2.0 * q - 2.0 * p); };
    int k = 0;
    at(v, 0) = 0;
    at(z, 0) = -inf;
    at(z, 1) = inf;
    for (int q = 1; q < n; ++q) {
        double s = cross(q, at(v, k));
        while (s <= at(z, k)) {
            --k;
            s = cross(q, at(v, k));
        }
        ++k;
        at(v, k) = q;
        at(z, k) = s;
        at(z, k + 1) = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (at(z, k + 1) < q) ++k;
        const int p = at(v, k);
        at(d, q) = (q - p) * static_cast<double>(q - p) + at(f, p);
    }
}

}  // namespace

GestureShape gesture_shape(std::string_view label) {
    const auto& row = kShapes[static_cast<std::size_t>(gesture_index(label))];
    GestureShape g;
    g.pose.curl = row.curl;
    g.pose.spread = row.spread;
    g.pose.thumb_across = row.across;
    g.rotation_deg = row.rotation;
    return g;
}

std::array<double, 3> HandPlacement::apply(double x, double y, double z) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double ux = c * x - s * y, uy = s * x + c * y;
    return {tx + scale * ux, ty - scale * uy, scale * z};
}

Tensor HandPlacement::apply(const Tensor& points) const {
    Tensor out(points.shape());
    for (int i = 0; i < points.dim(0); ++i) {
        const auto p = apply(points.at(i, 0), points.at(i, 1), points.at(i, 2));
        for (int c = 0; c < 3; ++c) out.at(i, c) = p[static_cast<std::size_t>(c)];
    }
    return out;
}

Tensor distance_transform(const Tensor& mask) {
    const int H = mask.dim(1), W = mask.dim(2);
    Tensor sq({1, H, W});
    const int n = std::max(H, W);
    std::vector<double> f(static_cast<std::size_t>(n)), d(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n) + 1);
    std::vector<int> v(static_cast<std::size_t>(n));
    // Distance to background: background cells are the sources.
    for (int x = 0; x < W; ++x) {
        f.resize(static_cast<std::size_t>(H));
        d.resize(static_cast<std::size_t>(H));
        for (int y = 0; y < H; ++y) f[static_cast<std::size_t>(y)] = mask.at(0, y, x) > 0.5 ? kFar : 0.0;
        dt1d(f, d, v, z);
        for (int y = 0; y < H; ++y) sq.at(0, y, x) = d[static_cast<std::size_t>(y)];
    }
    Tensor out({1, H, W});
    for (int y = 0; y < H; ++y) {
        f.resize(static_cast<std::size_t>(W));
        d.resize(static_cast<std::size_t>(W));
        for (int x = 0; x < W; ++x) f[static_cast<std::size_t>(x)] = sq.at(0, y, x);
        dt1d(f, d, v, z);
        for (int x = 0; x < W; ++x) {
            const double q = d[static_cast<std::size_t>(x)];
            // An all-foreground image has no source; report the image size.
            out.at(0, y, x) = q >= kFar ? static_cast<double>(H + W) : std::sqrt(q);
        }
    }
    return out;
}

Scene render_scene(const SceneSpec& spec) {
    if (spec.gesture < 0 || spec.gesture >= kGestureCount) throw ValidationError("gesture index out of range");
    const int W = spec.width, H = spec.height;
    if (W < 256 || H < 256) throw ValidationError("scene must be at least 256 x 256");
    CounterRng rng(spec.seed, {0x5ce7e, spec.index});

    GestureShape shape = gesture_shape(kGestureNames[static_cast<std::size_t>(spec.gesture)]);
    for (double& c : shape.pose.curl) c = std::clamp(c + 0.08 * (rng.uniform() - 0.5), 0.0, 1.0);
    for (double& s : shape.pose.spread) s += 0.06 * (rng.uniform() - 0.5);
    const Tensor joints = mesh::pose_joints(shape.pose);
    const Silhouette sil = silhouette(joints);

    HandPlacement place;
    place.scale = 6.5 + 2.0 * rng.uniform();
    place.rotation = (shape.rotation_deg + 36.0 * (rng.uniform() - 0.5)) * kDeg;
    // Extent of the placed hand at the origin, from the primitives' bounds.
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    auto grow = [&](double x, double y, double r) {
        for (int k = 0; k < 16; ++k) {
            const double a = 2.0 * std::numbers::pi * k / 16;
            const auto p = place.apply(x + r * std::cos(a), y + r * std::sin(a), 0.0);
            lo_x = std::min(lo_x, p[0]);
            hi_x = std::max(hi_x, p[0]);
            lo_y = std::min(lo_y, p[1]);
            hi_y = std::max(hi_y, p[1]);
        }
    };
    for (const auto& c : sil.capsules) {
        grow(c.a.x, c.a.y, c.r * 1.1);
        grow(c.b.x, c.b.y, c.r * 1.1);
    }
    grow(sil.palm_centre.x, sil.palm_centre.y, std::max(sil.palm_a, sil.palm_b) * 1.05);
    const double margin = 6.0;
    const double min_tx = margin - lo_x, max_tx = W - margin - hi_x;
    const double min_ty = margin - lo_y, max_ty = H - margin - hi_y;
    if (max_tx < min_tx || max_ty < min_ty) throw ValidationError("scene too small for the hand");
    place.tx = min_tx + (max_tx - min_tx) * rng.uniform();
    place.ty = min_ty + (max_ty - min_ty) * rng.uniform();
    lo_x += place.tx;
    hi_x += place.tx;
    lo_y += place.ty;
    hi_y += place.ty;

    const int kind = static_cast<int>(rng.below(kSurfaces.size()));
    const auto& color = kColors[rng.below(kColors.size())];
    const Rgb skin = kSkin[rng.below(kSkin.size())];
    const std::array<double, 4> phase = {rng.uniform() * 6.28, rng.uniform() * 6.28, rng.uniform() * 6.28,
                                         rng.uniform() * 6.28};

    Scene s;
    s.image = Tensor({3, H, W});
    s.mask = Tensor({1, H, W});
    Tensor shade({1, H, W});
    const double c = std::cos(place.rotation), sn = std::sin(place.rotation);
    int bx0 = W, by0 = H, bx1 = -1, by1 = -1;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            Rgb px = background_pixel(kind, color.rgb, x, y, phase);
            // Inverse placement of the pixel centre.
            const double ux = (x + 0.5 - place.tx) / place.scale, uy = -(y + 0.5 - place.ty) / place.scale;
            const P2 p{c * ux + sn * uy, -sn * ux + c * uy};
            const double h = (x + 0.5 >= lo_x - 2 && x - 0.5 <= hi_x + 2 && y + 0.5 >= lo_y - 2 && y - 0.5 <= hi_y + 2)
                                 ? sil.height(p)
                                 : -1.0;
            if (h >= 0.0) {
                const double k = 0.55 + 0.45 * h;
                px = {skin.r * k, skin.g * k, skin.b * k};
                s.mask.at(0, y, x) = 1.0;
                shade.at(0, y, x) = h;
                bx0 = std::min(bx0, x);
                bx1 = std::max(bx1, x);
                by0 = std::min(by0, y);
                by1 = std::max(by1, y);
            }
            s.image.at(0, y, x) = px.r;
            s.image.at(1, y, x) = px.g;
            s.image.at(2, y, x) = px.b;
        }
    }
    if (bx1 < 0) throw Error("rendered hand is empty");
    s.image = quantize(s.image, 8);

    const Tensor dt = distance_transform(s.mask);
    double dmax = 0.0;
    for (std::size_t i = 0; i < dt.size(); ++i) {
        if (s.mask[i] > 0.5) dmax = std::max(dmax, dt[i]);
    }
    s.depth = Tensor({1, H, W});
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            s.depth.at(0, y, x) = s.mask.at(0, y, x) > 0.5
                                      ? 0.5 + 0.5 * dt.at(0, y, x) / dmax
                                      : 0.08 + 0.25 * y / H + 0.02 * std::sin(0.05 * x + phase[2]);
        }
    }
    s.depth = quantize(s.depth, 16);

    s.mesh = mesh::procedural_mesh(shape.pose);
    s.mesh.vertices = place.apply(s.mesh.vertices);
    const Tensor placed = place.apply(joints);
    s.joints_px = Tensor({mesh::kKeypoints, 2});
    for (int i = 0; i < mesh::kKeypoints; ++i) {
        s.joints_px.at(i, 0) = placed.at(i, 0);
        s.joints_px.at(i, 1) = placed.at(i, 1);
    }
    s.bbox = {static_cast<double>(bx0) / W, static_cast<double>(by0) / H, static_cast<double>(bx1 + 1) / W,
              static_cast<double>(by1 + 1) / H};
    s.background = std::string(color.name) + " " + std::string(kSurfaces[static_cast<std::size_t>(kind)]);
    return s;
}

std::string synth_sample_id(Split split, std::uint64_t seed, std::uint64_t index) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "synth-%s-%llu-%05llu", std::string(split_name(split)).c_str(),
                  static_cast<unsigned long long>(seed), static_cast<unsigned long long>(index));
    return buf;
}

SynthSample synth_sample(std::uint64_t index, std::uint64_t seed, Split split) {
    SceneSpec spec;
    spec.gesture = static_cast<int>(index % kGestureCount);
    spec.seed = seed ^ (split == Split::test ? 0x7e57000000000000ULL : 0);
    spec.index = index;
    Scene scene = render_scene(spec);

    SynthSample out;
    MultimodalSample& m = out.sample;
    m.sample_id = synth_sample_id(split, seed, index);
    m.split = split;
    m.gesture_label = std::string(kGestureNames[static_cast<std::size_t>(spec.gesture)]);
    m.caption = "a photo of a hand showing the " + m.gesture_label + " gesture in front of a " + scene.background;
    m.image = std::move(scene.image);
    m.depth = std::move(scene.depth);
    m.bbox = scene.bbox;
    m.hand_rgb = crop_on_bbox(m.image, m.bbox, kHandCrop);
    m.hand_depth = crop_on_bbox(m.depth, m.bbox, kHandCrop);
    m.mesh = std::move(scene.mesh);
    out.joints_px = std::move(scene.joints_px);
    return out;
}

std::vector<SynthSample> synth_generate(int n, std::uint64_t seed, Split split) {
    if (n < 1) throw ValidationError("synth needs n >= 1");
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(synth_sample(static_cast<std::uint64_t>(i), seed, split));
    return out;
}

std::filesystem::path write_synth(const std::filesystem::path& dir, int n, std::uint64_t seed, Split split) {
    if (n < 1) throw ValidationError("synth needs n >= 1");
    std::filesystem::create_directories(dir);
    std::vector<ManifestRecord> rows;
    for (int i = 0; i < n; ++i) rows.push_back(save_sample(synth_sample(static_cast<std::uint64_t>(i), seed, split).sample, dir));
    const auto path = dir / "manifest.jsonl";
    write_manifest(path, std::move(rows));
    return path;
}

}  // namespace handrawer::data
