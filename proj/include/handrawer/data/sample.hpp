#pragma once
// Multimodal training records and the line-delimited manifest that indexes
// their files.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "handrawer/core/tensor.hpp"
#include "handrawer/mesh/mesh.hpp"

namespace handrawer::data {

inline constexpr int kImageSize = 512;
inline constexpr int kHandCrop = 225;
inline constexpr int kEvalCrop = 299;

enum class Split { train, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct MultimodalSample {
    std::string sample_id;
    Split split = Split::train;
    std::string gesture_label;
    std::string caption;
    Tensor image;       // [3,512,512] RGB
    Tensor depth;       // [1,512,512]
    Tensor hand_rgb;    // [3,225,225], window of image centred on the bbox
    Tensor hand_depth;  // [1,225,225], same window of depth
    mesh::HandMesh mesh;  // vertices in image pixels: x right, y down, z toward the camera
    mesh::NormalizedBBox bbox;

    // Shapes, value ranges, label, and that the hand crops are the exact
    // bbox-centred windows of the whole-image rasters.
    void validate() const;
};

// ---- manifest ----

inline constexpr int kManifestVersion = 1;

struct ManifestRecord {
    std::string sample_id;
    Split split = Split::train;
    std::string gesture_label;
    std::string caption;
    mesh::NormalizedBBox bbox;
    // File paths relative to the manifest's directory. Only `image` is
    // required; generated-image manifests leave the rest unset.
    std::string image;
    std::optional<std::string> depth, hand_rgb, hand_depth, mesh;
};

// The field order of every record line.
const std::vector<std::string>& manifest_fields();

// Writes the schema header line, then one JSON object per record sorted by
// sample_id. Duplicate ids are rejected.
void write_manifest(const std::filesystem::path& path, std::vector<ManifestRecord> records);
std::string manifest_text(std::vector<ManifestRecord> records);
// ParseError names the offending field (with its line number).
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
std::vector<ManifestRecord> parse_manifest(std::string_view text);

// Writes the sample's rasters and mesh under root (images/, depth/,
// hand_rgb/, hand_depth/, mesh/) and returns its record. Rasters are
// quantized by the file format; the in-memory sample should already be.
ManifestRecord save_sample(const MultimodalSample& sample, const std::filesystem::path& root);
MultimodalSample load_sample(const ManifestRecord& record, const std::filesystem::path& root);

// Selects rows by a spec: "all", "0,3,5", "2-7", or sample ids; entries may
// be mixed with commas.
std::vector<ManifestRecord> select_rows(const std::vector<ManifestRecord>& rows, std::string_view spec);

// ---- captions ----

inline constexpr int kCaptionTemplateVersion = 2;

// Instruction for a captioning adapter. Embeds the canonical label and asks
// for a background description. Versions 1..kCaptionTemplateVersion exist.
std::string caption_prompt(std::string_view gesture_label, int version = kCaptionTemplateVersion);

}  // namespace handrawer::data
