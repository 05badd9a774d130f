#include "handrawer/data/sample.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/data/gestures.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/raster.hpp"
#include "handrawer/mesh/procedural.hpp"

namespace handrawer::data {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "test") return Split::test;
    throw ValidationError("split must be 'train' or 'test', got '" + std::string(name) + "'");
}

namespace {

void check_raster(const Tensor& t, int channels, int size, const char* what) {
    if (t.rank() != 3 || t.dim(0) != channels || t.dim(1) != size || t.dim(2) != size) {
        throw ValidationError(std::string(what) + " must be " + std::to_string(channels) + " x " + std::to_string(size) +
                              " x " + std::to_string(size) + ", got " + t.shape_str());
    }
    for (double v : t.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(what) + " values must lie in [0,1]");
    }
}

}  // namespace

void MultimodalSample::validate() const {
    if (sample_id.empty()) throw ValidationError("sample_id is empty");
    gesture_index(gesture_label);
    bbox.validate();
    check_raster(image, 3, kImageSize, "image");
    check_raster(depth, 1, kImageSize, "depth");
    check_raster(hand_rgb, 3, kHandCrop, "hand_rgb");
    check_raster(hand_depth, 1, kHandCrop, "hand_depth");
    if (!bit_equal(crop_on_bbox(image, bbox, kHandCrop), hand_rgb)) {
        throw ValidationError("hand_rgb of " + sample_id + " is not the bbox-centred window of the image");
    }
    if (!bit_equal(crop_on_bbox(depth, bbox, kHandCrop), hand_depth)) {
        throw ValidationError("hand_depth of " + sample_id + " is not the bbox-centred window of the depth");
    }
    if (!mesh.vertices.empty()) mesh.validate();
}

const std::vector<std::string>& manifest_fields() {
    static const std::vector<std::string> f = {"sample_id", "split", "gesture_label", "caption", "bbox", "image",
                                               "depth",     "hand_rgb", "hand_depth", "mesh"};
    return f;
}

namespace {

ojson header_json() {
    ojson h;
    h["schema"] = "handrawer-manifest";
    h["version"] = kManifestVersion;
    h["fields"] = manifest_fields();
    return h;
}

ojson record_json(const ManifestRecord& r) {
    ojson j;
    j["sample_id"] = r.sample_id;
    j["split"] = std::string(split_name(r.split));
    j["gesture_label"] = r.gesture_label;
    j["caption"] = r.caption;
    j["bbox"] = {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1};
    j["image"] = r.image;
    auto opt = [](const std::optional<std::string>& s) { return s ? ojson(*s) : ojson(nullptr); };
    j["depth"] = opt(r.depth);
    j["hand_rgb"] = opt(r.hand_rgb);
    j["hand_depth"] = opt(r.hand_depth);
    j["mesh"] = opt(r.mesh);
    return j;
}

std::vector<ManifestRecord> sorted_unique(std::vector<ManifestRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) { return a.sample_id < b.sample_id; });
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].sample_id == records[i - 1].sample_id) {
            throw ValidationError("duplicate sample_id '" + records[i].sample_id + "' in manifest");
        }
    }
    return records;
}

}  // namespace

std::string manifest_text(std::vector<ManifestRecord> records) {
    records = sorted_unique(std::move(records));
    std::string out = header_json().dump() + "\n";
    for (const auto& r : records) out += record_json(r).dump() + "\n";
    return out;
}

void write_manifest(const fs::path& path, std::vector<ManifestRecord> records) {
    io::write_text_atomic(path, manifest_text(std::move(records)));
}

std::vector<ManifestRecord> parse_manifest(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& field, const std::string& msg) {
        throw ParseError(field, "line " + std::to_string(line_no) + ": " + msg);
    };
    if (!std::getline(in, line)) throw ParseError("header", "manifest is empty");
    ++line_no;
    ojson header;
    try {
        header = ojson::parse(line);
    } catch (const nlohmann::json::exception&) {
        fail("header", "not valid JSON");
    }
    if (!header.is_object() || header.value("schema", "") != "handrawer-manifest") fail("schema", "unknown schema");
    if (header.value("version", 0) != kManifestVersion) fail("version", "unsupported manifest version");
    if (header["fields"] != ojson(manifest_fields())) fail("fields", "field list does not match this version");

    std::vector<ManifestRecord> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ojson j;
        try {
            j = ojson::parse(line);
        } catch (const nlohmann::json::exception&) {
            fail("record", "not valid JSON");
        }
        if (!j.is_object()) fail("record", "expected an object");
        auto str = [&](const char* key) -> std::string {
            if (!j.contains(key) || !j[key].is_string()) fail(key, "missing or not a string");
            return j[key].get<std::string>();
        };
        auto opt = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            if (!j[key].is_string()) fail(key, "must be a string or null");
            return j[key].get<std::string>();
        };
        ManifestRecord r;
        r.sample_id = str("sample_id");
        try {
            r.split = parse_split(str("split"));
        } catch (const ValidationError& e) {
            fail("split", e.what());
        }
        r.gesture_label = str("gesture_label");
        if (!is_gesture(r.gesture_label)) fail("gesture_label", "unknown gesture '" + r.gesture_label + "'");
        r.caption = str("caption");
        if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4) fail("bbox", "expected 4 numbers");
        for (const auto& v : j["bbox"]) {
            if (!v.is_number()) fail("bbox", "expected 4 numbers");
        }
        r.bbox = {j["bbox"][0].get<double>(), j["bbox"][1].get<double>(), j["bbox"][2].get<double>(),
                  j["bbox"][3].get<double>()};
        try {
            r.bbox.validate();
        } catch (const ValidationError& e) {
            fail("bbox", e.what());
        }
        r.image = str("image");
        r.depth = opt("depth");
        r.hand_rgb = opt("hand_rgb");
        r.hand_depth = opt("hand_depth");
        r.mesh = opt("mesh");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_manifest(ss.str());
}

ManifestRecord save_sample(const MultimodalSample& s, const fs::path& root) {
    ManifestRecord r;
    r.sample_id = s.sample_id;
    r.split = s.split;
    r.gesture_label = s.gesture_label;
    r.caption = s.caption;
    r.bbox = s.bbox;
    for (const char* d : {"images", "depth", "hand_rgb", "hand_depth", "mesh"}) fs::create_directories(root / d);
    r.image = "images/" + s.sample_id + ".png";
    write_png_rgb8(root / r.image, s.image);
    if (!s.depth.empty()) {
        r.depth = "depth/" + s.sample_id + ".png";
        write_png_gray16(root / *r.depth, s.depth);
    }
    if (!s.hand_rgb.empty()) {
        r.hand_rgb = "hand_rgb/" + s.sample_id + ".png";
        write_png_rgb8(root / *r.hand_rgb, s.hand_rgb);
    }
    if (!s.hand_depth.empty()) {
        r.hand_depth = "hand_depth/" + s.sample_id + ".png";
        write_png_gray16(root / *r.hand_depth, s.hand_depth);
    }
    if (!s.mesh.vertices.empty()) {
        r.mesh = "mesh/" + s.sample_id + ".mesh";
        mesh::save_mesh_record(root / *r.mesh, s.mesh, mesh::procedural_topology().regressor);
    }
    return r;
}

MultimodalSample load_sample(const ManifestRecord& r, const fs::path& root) {
    MultimodalSample s;
    s.sample_id = r.sample_id;
    s.split = r.split;
    s.gesture_label = r.gesture_label;
    s.caption = r.caption;
    s.bbox = r.bbox;
    s.image = read_png(root / r.image);
    if (r.depth) s.depth = read_png(root / *r.depth);
    if (r.hand_rgb) s.hand_rgb = read_png(root / *r.hand_rgb);
    if (r.hand_depth) s.hand_depth = read_png(root / *r.hand_depth);
    if (r.mesh) s.mesh = mesh::load_mesh_record(root / *r.mesh).mesh;
    return s;
}

std::vector<ManifestRecord> select_rows(const std::vector<ManifestRecord>& rows, std::string_view spec) {
    if (spec == "all") return rows;
    std::vector<ManifestRecord> out;
    std::set<std::size_t> taken;
    auto take = [&](std::size_t i) {
        if (i >= rows.size()) throw ValidationError("row " + std::to_string(i) + " is out of range");
        if (taken.insert(i).second) out.push_back(rows[i]);
    };
    auto parse_int = [](std::string_view s, std::size_t& v) {
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        return r.ec == std::errc() && r.ptr == s.data() + s.size();
    };
    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string_view item = spec.substr(pos, comma - pos);
        pos = comma + 1;
        if (item.empty()) continue;
        std::size_t a = 0, b = 0;
        const std::size_t dash = item.find('-');
        if (parse_int(item, a)) {
            take(a);
        } else if (dash != std::string_view::npos && parse_int(item.substr(0, dash), a) &&
                   parse_int(item.substr(dash + 1), b) && a <= b) {
            for (std::size_t i = a; i <= b; ++i) take(i);
        } else {
            auto it = std::find_if(rows.begin(), rows.end(), [&](const ManifestRecord& r) { return r.sample_id == item; });
            if (it == rows.end()) throw ValidationError("no row matches '" + std::string(item) + "'");
            take(static_cast<std::size_t>(it - rows.begin()));
        }
    }
    return out;
}

std::string caption_prompt(std::string_view gesture_label, int version) {
    const std::string label = canonical_gesture(gesture_label);
    switch (version) {
        case 1:
            return "Describe this photo in one sentence. The hand shows the \"" + label +
                   "\" gesture; mention the gesture by name and describe the background.";
        case 2:
            return "Write one sentence describing this photo. The hand in the photo makes the \"" + label +
                   "\" gesture. Name the gesture as \"" + label +
                   "\", then describe the background scene, its colours and the lighting. Do not describe the person.";
        default:
            throw ValidationError("caption template version " + std::to_string(version) + " does not exist");
    }
}

}  // namespace handrawer::data
