#include "handrawer/pipeline/runs.hpp"

#include <cstdio>

#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/sampler/sampler.hpp"

namespace handrawer::pipeline {

namespace fs = std::filesystem;

std::string file_digest(const fs::path& path) {
    const auto bytes = io::read_file(path);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()))));
    return buf;
}

void write_run_record(const fs::path& dir, const std::string& command, nlohmann::ordered_json details) {
    nlohmann::ordered_json j;
    j["tool"] = "handrawer";
    j["version"] = kToolVersion;
    j["command"] = command;
    for (auto& [k, v] : details.items()) j[k] = v;
    fs::create_directories(dir);
    io::write_text_atomic(dir / "run.json", j.dump(2) + "\n");
}

std::vector<data::MultimodalSample> load_samples(const fs::path& manifest) {
    const auto rows = data::read_manifest(manifest);
    const fs::path root = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
    std::vector<data::MultimodalSample> out;
    for (const auto& r : rows) out.push_back(data::load_sample(r, root));
    return out;
}

TrainRunResult train_run(const train::TrainConfig& config, const std::vector<data::MultimodalSample>& samples,
                         const fs::path& out_dir, const TrainRunOptions& options) {
    config.validate();
    sampler::require_writable_dir(out_dir);
    std::vector<train::PreparedSample> prepared;
    {
        train::HandDiffusionModel probe(config);
        for (const auto& s : samples) prepared.push_back(probe.prepare(s));
    }
    train::Trainer trainer(config, std::move(prepared));
    if (options.resume) trainer.load(*options.resume, options.force);
    train::MetricsLog log(out_dir / "metrics.jsonl", options.resume.has_value());
    TrainRunResult result;
    while (trainer.step_index() < config.steps) {
        const train::LossBreakdown loss = trainer.step();
        const int step = trainer.step_index();
        log.write(step, loss);
        result.losses.push_back(loss);
        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step < config.steps) {
            trainer.save(out_dir / ("ckpt_" + std::to_string(step) + ".ckpt"));
        }
        if (options.progress && options.log_every > 0 && step % options.log_every == 0) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "step %d/%d total %.5f denoise %.5f rehand %.5f", step, config.steps,
                          loss.total, loss.denoise, loss.rehand);
            options.progress(buf);
        }
    }
    result.checkpoint = out_dir / "final.ckpt";
    trainer.save(result.checkpoint);
    return result;
}

namespace {

data::ManifestRecord eval_record(const data::MultimodalSample& s, int i, const std::string& image) {
    data::ManifestRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "eval-%04d", i);
    r.sample_id = id;
    r.split = s.split;
    r.gesture_label = s.gesture_label;
    r.caption = s.caption;
    r.bbox = s.bbox;
    r.image = image;
    return r;
}

}  // namespace

AblationOutcome run_ablation(const std::vector<data::MultimodalSample>& samples, const fs::path& out_dir,
                             const AblationOptions& options) {
    if (samples.empty()) throw ValidationError("ablation needs training samples");
    if (options.eval_samples < 2) throw ValidationError("ablation needs at least 2 eval samples");
    sampler::require_writable_dir(out_dir);
    auto say = [&](const std::string& m) {
        if (options.progress) options.progress(m);
    };

    // Reference set: the ground-truth image of each eval condition.
    const fs::path ref_dir = out_dir / "reference";
    fs::create_directories(ref_dir);
    std::vector<data::ManifestRecord> ref;
    for (int i = 0; i < options.eval_samples; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i) % samples.size()];
        const std::string name = s.sample_id + ".png";
        if (!fs::exists(ref_dir / name)) data::write_png_rgb8(ref_dir / name, s.image);
        ref.push_back(eval_record(s, i, name));
    }
    data::write_manifest(ref_dir / "manifest.jsonl", ref);
    const auto extractor = eval::make_extractor("surrogate");
    const eval::FeatureSet ref_features = eval::extract(ref, ref_dir, *extractor);

    AblationOutcome out;
    for (train::Ablation a : options.configs) {
        const std::string name(train::ablation_name(a));
        train::TrainConfig cfg = options.base;
        cfg.ablation = a;
        const fs::path run_dir = out_dir / name;
        fs::path ckpt;
        if (auto it = options.pretrained.find(a); it != options.pretrained.end()) {
            ckpt = it->second;
            say(name + ": reusing " + ckpt.string());
        } else {
            say(name + ": training " + std::to_string(cfg.steps) + " steps");
            TrainRunOptions topt;
            topt.progress = [&](const std::string& m) { say(name + ": " + m); };
            topt.log_every = 50;
            ckpt = train_run(cfg, samples, run_dir, topt).checkpoint;
        }
        const auto model = train::load_model(ckpt);
        if (model->config().hash() != cfg.hash()) {
            throw ValidationError("checkpoint " + ckpt.string() + " was trained with a different configuration");
        }
        const fs::path gen_dir = run_dir / "samples";
        fs::create_directories(gen_dir);
        std::vector<data::ManifestRecord> gen;
        say(name + ": sampling " + std::to_string(options.eval_samples) + " images");
        std::vector<train::Conditioning> conds;
        for (const auto& s : samples) conds.push_back(model->condition(s));
        for (int i = 0; i < options.eval_samples; ++i) {
            const std::size_t k = static_cast<std::size_t>(i) % samples.size();
            const sampler::SampleOptions so{options.sample_steps, options.sample_seed + static_cast<std::uint64_t>(i)};
            const Tensor img = data::quantize(sampler::sample_image(*model, conds[k], so), 8);
            auto rec = eval_record(samples[k], i, "");
            rec.image = rec.sample_id + ".png";
            data::write_png_rgb8(gen_dir / rec.image, img);
            gen.push_back(rec);
        }
        data::write_manifest(gen_dir / "manifest.jsonl", gen);
        const eval::FeatureSet gen_features = eval::extract(gen, gen_dir, *extractor);
        eval::MetricReport report = eval::compare(ref_features, gen_features, extractor->name(), options.eval);
        io::write_text_atomic(run_dir / "report.json", report.to_json().dump(2) + "\n");
        say(name + ": FID-Hand " + std::to_string(report.fid_hand));
        out.reports.emplace_back(name, std::move(report));
    }

    out.full_is_best = true;
    const eval::MetricReport* full = nullptr;
    for (const auto& [n, r] : out.reports) {
        if (n == "full") full = &r;
    }
    if (!full) {
        out.full_is_best = false;
    } else {
        for (const auto& [n, r] : out.reports) out.full_is_best = out.full_is_best && full->fid_hand <= r.fid_hand;
    }
    out.table = eval::comparison_table(out.reports);
    nlohmann::ordered_json j;
    j["eval_samples"] = options.eval_samples;
    j["sample_steps"] = options.sample_steps;
    j["extractor"] = extractor->name();
    j["full_fid_hand_is_lowest"] = out.full_is_best;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& [n, r] : out.reports) {
        auto row = r.to_json();
        row.erase("per_gesture");
        row["config"] = n;
        rows.push_back(row);
    }
    j["rows"] = rows;
    io::write_text_atomic(out_dir / "comparison.json", j.dump(2) + "\n");
    io::write_text_atomic(out_dir / "comparison.txt", out.table);
    out.report = out_dir / "comparison.txt";
    return out;
}

}  // namespace handrawer::pipeline
