#pragma once
// Ancestral DDPM sampling with the hand module evaluated once per call and
// its features injected at every reverse step.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "handrawer/data/sample.hpp"
#include "handrawer/train/model.hpp"

namespace handrawer::sampler {

struct SampleOptions {
    int steps = 50;  // reverse steps, evenly strided over the schedule when < T
    std::uint64_t seed = 0;
};

// Descending schedule indices visited by the reverse loop; the last is 0.
std::vector<int> sampling_timesteps(int T, int steps);

// Model-space latent after the reverse loop.
Tensor sample_latent(const train::HandDiffusionModel& model, const train::Conditioning& cond,
                     const SampleOptions& options);
// Decoded RGB image in [0,1].
Tensor sample_image(const train::HandDiffusionModel& model, const train::Conditioning& cond,
                    const SampleOptions& options);

struct GridEntry {
    std::string sample_id;
    std::filesystem::path file;
};

struct GridResult {
    std::vector<GridEntry> entries;
    std::optional<std::filesystem::path> montage;
    std::optional<std::filesystem::path> manifest;
};

// Generates one image per row (conditioned on the row's modalities, read
// relative to `root`) into out_dir as `<sample_id>__<tag>.png`, plus
// `montage__<tag>.png` and a manifest of the generated images carrying the
// rows' labels, captions and bboxes. `tag` names the configuration. Empty
// `rows` writes nothing.
GridResult sample_grid(const train::HandDiffusionModel& model, const std::vector<data::ManifestRecord>& rows,
                       const std::filesystem::path& root, const std::filesystem::path& out_dir,
                       const SampleOptions& options, const std::string& tag);

// Side-by-side montage of equally sized images, `columns` per row, each
// downsampled to `cell` pixels.
Tensor montage(const std::vector<Tensor>& images, int columns, int cell);

// Throws ValidationError unless dir exists (or can be created) and accepts
// a file write.
void require_writable_dir(const std::filesystem::path& dir);

}  // namespace handrawer::sampler
