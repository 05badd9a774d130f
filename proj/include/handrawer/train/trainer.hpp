#pragma once
// Joint training loop, optimizers, checkpoints and the metrics stream.
//
// Checkpoint blobs: "param/<name>" for every parameter (frozen included),
// "adam_m/<name>" and "adam_v/<name>" for trainable parameters under Adam.
// Header: {"format": "handrawer-train", "config": {...}, "config_hash",
// "step", "optimizer", "timesteps", "beta": [...]}.

#include <chrono>
#include <functional>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "handrawer/diffusion/checkpoint.hpp"
#include "handrawer/train/config.hpp"
#include "handrawer/train/losses.hpp"
#include "handrawer/train/model.hpp"

namespace handrawer::train {

class Optimizer {
public:
    explicit Optimizer(const TrainConfig& config) : config_(config) {}
    // Updates every trainable parameter from its accumulated gradient.
    void apply(const std::vector<nn::Parameter*>& params);
    std::uint64_t updates() const noexcept { return updates_; }

    void save(diffusion::Checkpoint& ckpt) const;
    void load(const diffusion::Checkpoint& ckpt, const std::vector<nn::Parameter*>& params);

private:
    TrainConfig config_;
    std::uint64_t updates_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

// Indices of the samples in the batch at `step`: each epoch visits all
// samples in an order shuffled by (seed, epoch).
std::vector<std::size_t> batch_indices(std::size_t n, int batch, int step, std::uint64_t seed);

class Trainer {
public:
    Trainer(const TrainConfig& config, std::vector<PreparedSample> data);

    HandDiffusionModel& model() noexcept { return *model_; }
    const std::vector<PreparedSample>& data() const noexcept { return data_; }
    int step_index() const noexcept { return step_; }

    // One optimizer step. A non-finite loss leaves all state untouched and
    // throws Error naming the step.
    LossBreakdown step();
    // Loss of the batch at the current step without updating anything.
    LossBreakdown evaluate_step() const;

    diffusion::Checkpoint checkpoint() const;
    void save(const std::filesystem::path& path) const;
    // Restores parameters, optimizer state and step counter. A config-hash
    // mismatch is refused (ValidationError) unless forced; a corrupt file
    // raises IntegrityError before anything is modified.
    void load(const diffusion::Checkpoint& ckpt, bool force = false);
    void load(const std::filesystem::path& path, bool force = false);

    // Test hook: called with the loss before the update is applied.
    std::function<void(LossBreakdown&)> loss_hook;

private:
    LossBreakdown run_batch(bool accumulate) const;

    TrainConfig config_;
    std::unique_ptr<HandDiffusionModel> model_;
    std::vector<PreparedSample> data_;
    Optimizer optimizer_;
    int step_ = 0;
};

// Line-delimited metrics: {"step", "denoise", "rehand", "total", "wallclock"}.
class MetricsLog {
public:
    explicit MetricsLog(const std::filesystem::path& path, bool append = false);
    void write(int step, const LossBreakdown& loss);

private:
    std::ofstream out_;
    std::chrono::steady_clock::time_point start_;
};

// Model config stored in a training checkpoint.
TrainConfig checkpoint_config(const diffusion::Checkpoint& ckpt);
// Builds a model from a checkpoint file's config and loads its parameters.
std::unique_ptr<HandDiffusionModel> load_model(const std::filesystem::path& path);

}  // namespace handrawer::train
