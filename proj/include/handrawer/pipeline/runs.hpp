#pragma once
// End-to-end runs shared by the command-line tool and the acceptance suite:
// provenance records, a training run with checkpoints and metrics, and the
// four-way ablation matrix with its comparison report.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "handrawer/data/sample.hpp"
#include "handrawer/eval/metrics.hpp"
#include "handrawer/train/trainer.hpp"

namespace handrawer::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

using Progress = std::function<void(const std::string&)>;

// 16-hex-digit FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

// Writes <dir>/run.json: {"tool", "version", "command", ...details}.
void write_run_record(const std::filesystem::path& dir, const std::string& command, nlohmann::ordered_json details);

std::vector<data::MultimodalSample> load_samples(const std::filesystem::path& manifest);

struct TrainRunOptions {
    std::optional<std::filesystem::path> resume;
    bool force = false;
    int log_every = 10;
    Progress progress;
};

struct TrainRunResult {
    std::vector<train::LossBreakdown> losses;  // steps run by this call
    std::filesystem::path checkpoint;
};

// Trains up to config.steps into out_dir: metrics.jsonl (appended on
// resume), ckpt_<step>.ckpt every checkpoint_every steps, final.ckpt.
TrainRunResult train_run(const train::TrainConfig& config, const std::vector<data::MultimodalSample>& samples,
                         const std::filesystem::path& out_dir, const TrainRunOptions& options = {});

struct AblationOptions {
    train::TrainConfig base;
    std::vector<train::Ablation> configs = {train::kAblations.begin(), train::kAblations.end()};
    int eval_samples = 200;
    int sample_steps = 10;
    std::uint64_t sample_seed = 1000;
    eval::EvalOptions eval;
    // Existing checkpoints to reuse instead of training, keyed by ablation.
    std::map<train::Ablation, std::filesystem::path> pretrained;
    Progress progress;
};

struct AblationOutcome {
    std::vector<std::pair<std::string, eval::MetricReport>> reports;
    bool full_is_best = false;  // full FID-Hand <= every ablation's
    std::string table;
    std::filesystem::path report;
};

// Trains every configuration on `samples`, generates eval_samples images per
// configuration (condition i is sample i mod n, seed sample_seed + i),
// evaluates each against the matching ground-truth images and writes
// comparison.txt and comparison.json under out_dir.
AblationOutcome run_ablation(const std::vector<data::MultimodalSample>& samples, const std::filesystem::path& out_dir,
                             const AblationOptions& options);

}  // namespace handrawer::pipeline
