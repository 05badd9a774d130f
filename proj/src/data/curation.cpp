#include "handrawer/data/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/data/gestures.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/synth.hpp"
#include "handrawer/mesh/procedural.hpp"

namespace handrawer::data {

namespace fs = std::filesystem;
using nlohmann::json;

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::crop512: return "crop512";
        case Stage::pose_filter: return "pose_filter";
        case Stage::depth: return "depth";
        case Stage::mesh: return "mesh";
        case Stage::crop225: return "crop225";
        case Stage::caption: return "caption";
        case Stage::alignment: return "alignment";
        case Stage::manual: return "manual";
        case Stage::manifest: return "manifest";
    }
    return "?";
}

namespace {

// Shared behaviour of the mock adapters: scripted failures and seeded
// random rejections.
struct MockPolicy {
    std::uint64_t seed = 0;
    std::uint64_t tag = 0;
    double reject_rate = 0.0;
    std::set<std::string> fail_ids;

    static MockPolicy from(const json& j, std::uint64_t seed, std::uint64_t tag) {
        MockPolicy p;
        p.seed = seed;
        p.tag = tag;
        p.reject_rate = j.value("reject_rate", 0.0);
        if (p.reject_rate < 0.0 || p.reject_rate > 1.0) throw ValidationError("reject_rate must lie in [0,1]");
        if (j.contains("fail_ids")) {
            for (const auto& id : j["fail_ids"]) p.fail_ids.insert(id.get<std::string>());
        }
        return p;
    }
    void maybe_fail(const RawItem& item) const {
        if (fail_ids.count(item.sample_id)) throw Error("scripted adapter failure");
    }
    bool random_reject(const RawItem& item) const {
        if (reject_rate <= 0.0) return false;
        CounterRng rng(seed, {tag, fnv1a64(item.sample_id)});
        return rng.uniform() < reject_rate;
    }
};

class MockPoseFilter : public PoseFilter {
public:
    MockPoseFilter(MockPolicy p, int every) : policy_(std::move(p)), every_(every) {}
    std::optional<std::string> check(const AnnotationContext& ctx) const override {
        policy_.maybe_fail(ctx.item);
        if (every_ > 0 && ctx.item.ordinal % static_cast<std::size_t>(every_) == static_cast<std::size_t>(every_ - 1)) {
            return "pose not detected";
        }
        if (policy_.random_reject(ctx.item)) return "low keypoint confidence";
        return std::nullopt;
    }

private:
    MockPolicy policy_;
    int every_;
};

class MockDepth : public DepthAnnotator {
public:
    explicit MockDepth(MockPolicy p) : policy_(std::move(p)) {}
    Verdict<Tensor> annotate(const AnnotationContext& ctx) const override {
        policy_.maybe_fail(ctx.item);
        if (policy_.random_reject(ctx.item)) return Verdict<Tensor>::reject("depth estimate unstable");
        const Tensor& im = ctx.image512;
        Tensor d({1, im.dim(1), im.dim(2)});
        for (int y = 0; y < im.dim(1); ++y) {
            for (int x = 0; x < im.dim(2); ++x) {
                d.at(0, y, x) = 0.299 * im.at(0, y, x) + 0.587 * im.at(1, y, x) + 0.114 * im.at(2, y, x);
            }
        }
        return Verdict<Tensor>::accept(quantize(d, 16));
    }

private:
    MockPolicy policy_;
};

class OracleDepth : public DepthAnnotator {
public:
    Verdict<Tensor> annotate(const AnnotationContext& ctx) const override {
        if (!ctx.item.sidecar.contains("depth")) throw Error("sidecar has no ground-truth depth");
        Tensor full = read_png(ctx.item.dir / ctx.item.sidecar["depth"].get<std::string>());
        return Verdict<Tensor>::accept(crop(full, ctx.window));
    }
};

mesh::NormalizedBBox box_of_vertices(const Tensor& v, int size) {
    double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
    for (int i = 0; i < v.dim(0); ++i) {
        x0 = std::min(x0, v.at(i, 0));
        x1 = std::max(x1, v.at(i, 0));
        y0 = std::min(y0, v.at(i, 1));
        y1 = std::max(y1, v.at(i, 1));
    }
    auto c = [size](double p) { return std::clamp(p / size, 0.0, 1.0); };
    return {c(std::floor(x0)), c(std::floor(y0)), c(std::ceil(x1)), c(std::ceil(y1))};
}

class MockMesh : public MeshAnnotator {
public:
    explicit MockMesh(MockPolicy p) : policy_(std::move(p)) {}
    Verdict<MeshAnnotation> annotate(const AnnotationContext& ctx) const override {
        policy_.maybe_fail(ctx.item);
        if (policy_.random_reject(ctx.item)) return Verdict<MeshAnnotation>::reject("mesh fit diverged");
        const GestureShape shape = gesture_shape(ctx.item.gesture_label);
        HandPlacement place;
        place.scale = 7.5;
        place.rotation = shape.rotation_deg * 3.14159265358979323846 / 180.0;
        const auto centre = place.apply(0.0, 4.2, 0.0);
        place.tx = ctx.item.hand_cx - ctx.window.x0 - centre[0];
        place.ty = ctx.item.hand_cy - ctx.window.y0 - centre[1];
        MeshAnnotation a;
        a.mesh = mesh::procedural_mesh(shape.pose);
        a.mesh.vertices = place.apply(a.mesh.vertices);
        a.bbox = box_of_vertices(a.mesh.vertices, ctx.window.size);
        return Verdict<MeshAnnotation>::accept(std::move(a));
    }

private:
    MockPolicy policy_;
};

class OracleMesh : public MeshAnnotator {
public:
    Verdict<MeshAnnotation> annotate(const AnnotationContext& ctx) const override {
        const auto& sc = ctx.item.sidecar;
        if (!sc.contains("mesh") || !sc.contains("bbox")) throw Error("sidecar has no ground-truth mesh/bbox");
        MeshAnnotation a;
        a.mesh = mesh::load_mesh_record(ctx.item.dir / sc["mesh"].get<std::string>()).mesh;
        for (int i = 0; i < a.mesh.vertices.dim(0); ++i) {
            a.mesh.vertices.at(i, 0) -= ctx.window.x0;
            a.mesh.vertices.at(i, 1) -= ctx.window.y0;
        }
        const double W = sc["raw_size"][0].get<double>(), H = sc["raw_size"][1].get<double>();
        const double s = ctx.window.size;
        a.bbox = {(sc["bbox"][0].get<double>() * W - ctx.window.x0) / s, (sc["bbox"][1].get<double>() * H - ctx.window.y0) / s,
                  (sc["bbox"][2].get<double>() * W - ctx.window.x0) / s, (sc["bbox"][3].get<double>() * H - ctx.window.y0) / s};
        if (a.bbox.x0 < 0 || a.bbox.y0 < 0 || a.bbox.x1 > 1 || a.bbox.y1 > 1) {
            return Verdict<MeshAnnotation>::reject("hand extends beyond the 512 window");
        }
        return Verdict<MeshAnnotation>::accept(std::move(a));
    }
};

class MockCaption : public CaptionAnnotator {
public:
    explicit MockCaption(MockPolicy p) : policy_(std::move(p)) {}
    Verdict<std::string> annotate(const AnnotationContext& ctx, const std::string& prompt) const override {
        policy_.maybe_fail(ctx.item);
        if (policy_.random_reject(ctx.item)) return Verdict<std::string>::reject("caption missing gesture name");
        static const char* kScenes[] = {"a plain background", "an indoor room", "a wall", "a window"};
        const auto pick = fnv1a64(prompt + ctx.item.sample_id) % 4;
        return Verdict<std::string>::accept("a photo of a hand showing the " + canonical_gesture(ctx.item.gesture_label) +
                                            " gesture in front of " + kScenes[pick]);
    }

private:
    MockPolicy policy_;
};

class OracleCaption : public CaptionAnnotator {
public:
    Verdict<std::string> annotate(const AnnotationContext& ctx, const std::string&) const override {
        if (!ctx.item.sidecar.contains("caption")) throw Error("sidecar has no ground-truth caption");
        return Verdict<std::string>::accept(ctx.item.sidecar["caption"].get<std::string>());
    }
};

const json& entry(const json& config, const char* key) {
    if (!config.contains(key) || !config[key].is_object()) {
        throw ValidationError(std::string("adapter '") + key + "' is not bound in the adapter config");
    }
    return config[key];
}

std::string kind_of(const json& e, const char* key) {
    const std::string k = e.value("kind", "");
    if (k != "mock" && k != "oracle") {
        throw ValidationError(std::string("adapter '") + key + "' has unknown kind '" + k + "'");
    }
    return k;
}

}  // namespace

Adapters make_adapters(const json& config, const fs::path& base_dir) {
    if (!config.is_object()) throw ValidationError("adapter config must be a JSON object");
    const std::uint64_t seed = config.value("seed", 0ULL);
    Adapters a;
    {
        const json& e = entry(config, "pose_filter");
        if (kind_of(e, "pose_filter") != "mock") throw ValidationError("pose_filter supports only the mock kind");
        a.pose_filter = std::make_shared<MockPoseFilter>(MockPolicy::from(e, seed, 1), e.value("reject_every", 0));
    }
    {
        const json& e = entry(config, "depth");
        if (kind_of(e, "depth") == "mock") a.depth = std::make_shared<MockDepth>(MockPolicy::from(e, seed, 2));
        else a.depth = std::make_shared<OracleDepth>();
    }
    {
        const json& e = entry(config, "mesh");
        if (kind_of(e, "mesh") == "mock") a.mesh = std::make_shared<MockMesh>(MockPolicy::from(e, seed, 3));
        else a.mesh = std::make_shared<OracleMesh>();
    }
    {
        const json& e = entry(config, "caption");
        if (kind_of(e, "caption") == "mock") a.caption = std::make_shared<MockCaption>(MockPolicy::from(e, seed, 4));
        else a.caption = std::make_shared<OracleCaption>();
    }
    if (config.contains("accept_list") && !config["accept_list"].is_null()) {
        fs::path p = config["accept_list"].get<std::string>();
        if (p.is_relative()) p = base_dir / p;
        std::ifstream f(p);
        if (!f) throw ValidationError("cannot read accept list " + p.string());
        std::set<std::string> ids;
        for (std::string line; std::getline(f, line);) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (!line.empty() && line[0] != '#') ids.insert(line);
        }
        a.accept_list = std::move(ids);
    }
    return a;
}

Adapters load_adapters(const fs::path& config_file) {
    std::ifstream f(config_file);
    if (!f) throw ValidationError("cannot read adapter config " + config_file.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ParseError("adapters", e.what());
    }
    return make_adapters(j, config_file.parent_path());
}

std::size_t CurationReport::rejected_total() const {
    std::size_t n = 0;
    for (const auto& [stage, count] : rejected) n += count;
    return n;
}

nlohmann::ordered_json CurationReport::to_json() const {
    nlohmann::ordered_json j;
    j["input_count"] = input_count;
    j["accepted"] = accepted;
    nlohmann::ordered_json rej = nlohmann::ordered_json::object();
    for (Stage s : kStages) {
        auto it = rejected.find(stage_name(s));
        rej[stage_name(s)] = it == rejected.end() ? 0 : it->second;
    }
    j["rejected"] = rej;
    j["reasons"] = reasons;
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (auto name : kGestureNames) {
        auto it = per_gesture.find(std::string(name));
        hist[std::string(name)] = it == per_gesture.end() ? 0 : it->second;
    }
    j["per_gesture"] = hist;
    return j;
}

std::vector<RawItem> scan_raw(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("raw source " + dir.string() + " is not a directory");
    std::vector<RawItem> items;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        // a sidecar pairs with <stem>.png; other JSON files (run records) are skipped
        if (!fs::exists(dir / (e.path().stem().string() + ".png"))) continue;
        std::ifstream f(e.path());
        json j;
        try {
            j = json::parse(f);
        } catch (const json::exception& ex) {
            throw ParseError("sidecar", e.path().string() + ": " + ex.what());
        }
        RawItem it;
        try {
            it.sample_id = j.at("sample_id").get<std::string>();
            it.split = parse_split(j.value("split", "train"));
            it.gesture_label = canonical_gesture(j.at("gesture_label").get<std::string>());
            it.hand_cx = j.at("hand_center").at(0).get<double>();
            it.hand_cy = j.at("hand_center").at(1).get<double>();
        } catch (const json::exception& ex) {
            throw ParseError("sidecar", e.path().string() + ": " + ex.what());
        }
        it.dir = dir;
        it.sidecar = std::move(j);
        items.push_back(std::move(it));
    }
    std::sort(items.begin(), items.end(), [](const RawItem& a, const RawItem& b) { return a.sample_id < b.sample_id; });
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0 && items[i].sample_id == items[i - 1].sample_id) {
            throw ValidationError("duplicate raw sample_id '" + items[i].sample_id + "'");
        }
        items[i].ordinal = i;
    }
    return items;
}

namespace {

void remove_files(const ManifestRecord& r, const fs::path& root) {
    fs::remove(root / r.image);
    for (const auto* p : {&r.depth, &r.hand_rgb, &r.hand_depth, &r.mesh}) {
        if (*p) fs::remove(root / **p);
    }
}

std::optional<std::string> alignment_problem(const ManifestRecord& r, const fs::path& root) {
    const Tensor image = read_png(root / r.image);
    const Tensor depth = read_png(root / *r.depth);
    if (!bit_equal(crop_on_bbox(image, r.bbox, kHandCrop), read_png(root / *r.hand_rgb))) {
        return "hand_rgb pixel mismatch";
    }
    if (!bit_equal(crop_on_bbox(depth, r.bbox, kHandCrop), read_png(root / *r.hand_depth))) {
        return "hand_depth pixel mismatch";
    }
    const auto rec = mesh::load_mesh_record(root / *r.mesh);
    const Tensor kp = mesh::keypoints_from_vertices(rec.mesh, rec.regressor);
    const double tol = 2.0;
    for (int i = 0; i < kp.dim(0); ++i) {
        const double x = kp.at(i, 0), y = kp.at(i, 1);
        if (x < r.bbox.x0 * image.dim(2) - tol || x > r.bbox.x1 * image.dim(2) + tol || y < r.bbox.y0 * image.dim(1) - tol ||
            y > r.bbox.y1 * image.dim(1) + tol) {
            return "keypoint " + std::to_string(i) + " outside bbox";
        }
    }
    return std::nullopt;
}

}  // namespace

CurationReport curate(const fs::path& raw_dir, const Adapters& adapters, const fs::path& manifest_path,
                      const CurationHooks& hooks) {
    if (!adapters.pose_filter || !adapters.depth || !adapters.mesh || !adapters.caption) {
        throw ValidationError("all four adapters (pose_filter, depth, mesh, caption) must be bound");
    }
    const std::vector<RawItem> items = scan_raw(raw_dir);
    const fs::path root = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
    fs::create_directories(root);

    CurationReport report;
    report.input_count = items.size();
    std::vector<ManifestRecord> rows;
    for (const RawItem& item : items) {
        Stage stage = Stage::crop512;
        auto reject = [&](Stage s, const std::string& why) {
            report.rejected[stage_name(s)] += 1;
            report.reasons[stage_name(s)][why] += 1;
        };
        try {
            const Tensor raw = read_png(item.dir / (item.sample_id + ".png"));
            if (raw.dim(0) != 3) throw Error("raw image is not RGB");
            if (raw.dim(1) < kImageSize || raw.dim(2) < kImageSize) {
                reject(stage, "raw image smaller than 512");
                continue;
            }
            const Window window = centered_window(item.hand_cx, item.hand_cy, kImageSize, raw.dim(2), raw.dim(1));
            const Tensor image = crop(raw, window);
            const AnnotationContext ctx{item, image, window};

            stage = Stage::pose_filter;
            if (auto why = adapters.pose_filter->check(ctx)) {
                reject(stage, *why);
                continue;
            }

            stage = Stage::depth;
            auto depth = adapters.depth->annotate(ctx);
            if (!depth.value) {
                reject(stage, depth.reason);
                continue;
            }
            if (depth.value->shape() != std::vector<int>{1, kImageSize, kImageSize}) {
                throw Error("depth adapter returned " + depth.value->shape_str());
            }

            stage = Stage::mesh;
            auto m = adapters.mesh->annotate(ctx);
            if (!m.value) {
                reject(stage, m.reason);
                continue;
            }
            m.value->bbox.validate();
            m.value->mesh.validate();

            stage = Stage::crop225;
            MultimodalSample s;
            s.sample_id = item.sample_id;
            s.split = item.split;
            s.gesture_label = item.gesture_label;
            s.image = image;
            s.depth = std::move(*depth.value);
            s.bbox = m.value->bbox;
            s.mesh = std::move(m.value->mesh);
            s.hand_rgb = crop_on_bbox(s.image, s.bbox, kHandCrop);
            s.hand_depth = crop_on_bbox(s.depth, s.bbox, kHandCrop);

            stage = Stage::caption;
            auto caption = adapters.caption->annotate(ctx, caption_prompt(item.gesture_label));
            if (!caption.value) {
                reject(stage, caption.reason);
                continue;
            }
            s.caption = *caption.value;

            stage = Stage::alignment;
            ManifestRecord rec = save_sample(s, root);
            if (hooks.after_write) hooks.after_write(item.sample_id, rec, root);
            if (auto why = alignment_problem(rec, root)) {
                remove_files(rec, root);
                reject(stage, *why);
                continue;
            }

            stage = Stage::manual;
            if (adapters.accept_list && !adapters.accept_list->count(item.sample_id)) {
                remove_files(rec, root);
                reject(stage, "not on the accept list");
                continue;
            }

            stage = Stage::manifest;
            rows.push_back(std::move(rec));
            report.accepted += 1;
            report.per_gesture[item.gesture_label] += 1;
        } catch (const std::exception& e) {
            throw Error("curation failed for sample '" + item.sample_id + "' at stage '" + stage_name(stage) +
                        "': " + e.what());
        }
    }
    write_manifest(manifest_path, std::move(rows));
    io::write_text_atomic(root / "curation_report.json", report.to_json().dump(2) + "\n");
    return report;
}

void write_synth_raw(const fs::path& dir, int n, std::uint64_t seed, Split split, int width, int height) {
    if (n < 1) throw ValidationError("synth needs n >= 1");
    fs::create_directories(dir);
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.width = width;
        spec.height = height;
        spec.gesture = i % kGestureCount;
        spec.seed = seed ^ (split == Split::test ? 0x7e57000000000000ULL : 0);
        spec.index = static_cast<std::uint64_t>(i);
        const Scene scene = render_scene(spec);
        const std::string id = synth_sample_id(split, seed, static_cast<std::uint64_t>(i));
        write_png_rgb8(dir / (id + ".png"), scene.image);
        write_png_gray16(dir / (id + ".depth.png"), scene.depth);
        mesh::save_mesh_record(dir / (id + ".mesh"), scene.mesh, mesh::procedural_topology().regressor);
        nlohmann::ordered_json j;
        j["sample_id"] = id;
        j["split"] = std::string(split_name(split));
        j["gesture_label"] = std::string(kGestureNames[static_cast<std::size_t>(spec.gesture)]);
        j["hand_center"] = {scene.bbox.cx() * width, scene.bbox.cy() * height};
        j["raw_size"] = {width, height};
        j["bbox"] = {scene.bbox.x0, scene.bbox.y0, scene.bbox.x1, scene.bbox.y1};
        j["depth"] = id + ".depth.png";
        j["mesh"] = id + ".mesh";
        j["caption"] = "a photo of a hand showing the " + j["gesture_label"].get<std::string>() +
                       " gesture in front of a " + scene.background;
        io::write_text_atomic(dir / (id + ".json"), j.dump(2) + "\n");
    }
}

}  // namespace handrawer::data
