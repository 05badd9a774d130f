#pragma once
// Curation of raw hand photos into aligned multimodal samples.
//
// Stage order per sample: crop512 -> pose_filter -> depth -> mesh -> crop225
// -> caption -> alignment -> manual -> manifest. A rejection short-circuits
// the sample and is counted against its stage; an adapter failure (an
// exception) aborts the run naming the sample and stage.
//
// Raw source layout: for each sample `<id>.png` (any size, at least 512 in
// both dimensions) plus a sidecar `<id>.json`:
//   {"sample_id", "split", "gesture_label", "hand_center": [x, y] (pixels),
//    optional ground truth: "bbox" [x0,y0,x1,y1] relative to the raw image,
//    "depth" (16-bit PNG file name), "mesh" (mesh record file name),
//    "caption"}

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "handrawer/data/raster.hpp"
#include "handrawer/data/sample.hpp"

namespace handrawer::data {

enum class Stage { crop512, pose_filter, depth, mesh, crop225, caption, alignment, manual, manifest };
inline constexpr std::array<Stage, 9> kStages = {Stage::crop512, Stage::pose_filter, Stage::depth,
                                                 Stage::mesh,    Stage::crop225,     Stage::caption,
                                                 Stage::alignment, Stage::manual,    Stage::manifest};
const char* stage_name(Stage s);

struct RawItem {
    std::string sample_id;
    Split split = Split::train;
    std::string gesture_label;
    double hand_cx = 0, hand_cy = 0;
    std::filesystem::path dir;
    nlohmann::json sidecar;
    std::size_t ordinal = 0;  // position in sorted id order
};

// Everything an adapter may look at: the raw item and the 512 window.
struct AnnotationContext {
    const RawItem& item;
    const Tensor& image512;
    Window window;  // location of image512 inside the raw image
};

template <class T>
struct Verdict {
    std::optional<T> value;
    std::string reason;  // set when rejected
    static Verdict accept(T v) { return {std::move(v), {}}; }
    static Verdict reject(std::string why) { return {std::nullopt, std::move(why)}; }
};

struct MeshAnnotation {
    mesh::HandMesh mesh;  // 512-window pixel coordinates
    mesh::NormalizedBBox bbox;
};

class PoseFilter {
public:
    virtual ~PoseFilter() = default;
    // Empty optional = keep; otherwise the rejection reason.
    virtual std::optional<std::string> check(const AnnotationContext& ctx) const = 0;
};
class DepthAnnotator {
public:
    virtual ~DepthAnnotator() = default;
    virtual Verdict<Tensor> annotate(const AnnotationContext& ctx) const = 0;  // [1,512,512]
};
class MeshAnnotator {
public:
    virtual ~MeshAnnotator() = default;
    virtual Verdict<MeshAnnotation> annotate(const AnnotationContext& ctx) const = 0;
};
class CaptionAnnotator {
public:
    virtual ~CaptionAnnotator() = default;
    virtual Verdict<std::string> annotate(const AnnotationContext& ctx, const std::string& prompt) const = 0;
};

struct Adapters {
    std::shared_ptr<const PoseFilter> pose_filter;
    std::shared_ptr<const DepthAnnotator> depth;
    std::shared_ptr<const MeshAnnotator> mesh;
    std::shared_ptr<const CaptionAnnotator> caption;
    std::optional<std::set<std::string>> accept_list;  // manual review result
};

// Builds adapters from a JSON config:
//   {"seed": N,
//    "pose_filter": {"kind": "mock", "reject_every": K, "reject_rate": p, "fail_ids": [...]},
//    "depth":   {"kind": "mock" | "oracle", "reject_rate": p, "fail_ids": [...]},
//    "mesh":    {"kind": "mock" | "oracle", ...},
//    "caption": {"kind": "mock" | "oracle", ...},
//    "accept_list": "file with one sample_id per line"}
// Relative accept-list paths resolve against base_dir. All four adapter
// entries are required.
Adapters make_adapters(const nlohmann::json& config, const std::filesystem::path& base_dir = {});
Adapters load_adapters(const std::filesystem::path& config_file);

struct CurationReport {
    std::size_t input_count = 0;
    std::size_t accepted = 0;
    std::map<std::string, std::size_t> rejected;                        // by stage
    std::map<std::string, std::map<std::string, std::size_t>> reasons;  // stage -> reason -> count
    std::map<std::string, std::size_t> per_gesture;                     // accepted samples

    std::size_t rejected_total() const;
    bool balanced() const { return input_count == accepted + rejected_total(); }
    nlohmann::ordered_json to_json() const;
};

struct CurationHooks {
    // Called after a sample's files are written and before the alignment
    // check reads them back; paths are relative to the output root.
    std::function<void(const std::string& sample_id, const ManifestRecord& files, const std::filesystem::path& root)>
        after_write;
};

std::vector<RawItem> scan_raw(const std::filesystem::path& dir);

// Curates every raw item, writes sample files next to `manifest_path` plus
// the manifest and a `curation_report.json`.
CurationReport curate(const std::filesystem::path& raw_dir, const Adapters& adapters,
                      const std::filesystem::path& manifest_path, const CurationHooks& hooks = {});

// Synthetic raw source: `n` scenes of width x height with full ground-truth
// sidecars, suitable for the oracle adapters.
void write_synth_raw(const std::filesystem::path& dir, int n, std::uint64_t seed, Split split, int width = 640,
                     int height = 576);

}  // namespace handrawer::data
