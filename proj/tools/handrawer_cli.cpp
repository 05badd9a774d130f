#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/data/curation.hpp"
#include "handrawer/data/synth.hpp"
#include "handrawer/eval/metrics.hpp"
#include "handrawer/pipeline/runs.hpp"
#include "handrawer/sampler/sampler.hpp"
#include "handrawer/core/binary_io.hpp"

using namespace handrawer;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

void say(const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); }

nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw ValidationError("cannot read config file " + p.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config", p.string() + ": " + e.what());
    }
}

// Flags shared by train and ablate; unset flags leave the layered value.
struct TrainFlags {
    std::optional<std::string> config;
    std::optional<int> steps, batch, checkpoint_every;
    std::optional<double> lr, lambda;
    std::optional<std::string> ablation, optimizer;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app, bool with_ablation) {
        app->add_option("--config", config, "JSON config file layered over the defaults");
        app->add_option("--steps", steps, "training steps (> 0)");
        app->add_option("--lr", lr, "learning rate (> 0)");
        app->add_option("--lambda", lambda, "weight of the hand reconstruction loss (>= 0)");
        if (with_ablation) {
            app->add_option("--ablation", ablation, "full | without_ppzp | without_graph | without_3dmesh");
        }
        app->add_option("--seed", seed, "seed for initialization, batches and noise");
        app->add_option("--batch", batch, "samples per step");
        app->add_option("--optimizer", optimizer, "sgd | adam");
        app->add_option("--checkpoint-every", checkpoint_every, "write ckpt_<step>.ckpt every N steps (0 = off)");
    }

    // defaults < config file < flags
    train::TrainConfig resolve() const {
        train::TrainConfig c;
        if (config) c.apply_json(read_json_file(*config));
        nlohmann::json j = nlohmann::json::object();
        if (steps) j["steps"] = *steps;
        if (lr) j["lr"] = *lr;
        if (lambda) j["lambda_rehand"] = *lambda;
        if (ablation) j["ablation"] = *ablation;
        if (seed) j["seed"] = *seed;
        if (batch) j["batch"] = *batch;
        if (optimizer) j["optimizer"] = *optimizer;
        if (checkpoint_every) j["checkpoint_every"] = *checkpoint_every;
        c.apply_json(j);
        c.validate();
        return c;
    }
};

nlohmann::ordered_json input_record(const fs::path& p) {
    return {{"path", p.string()}, {"digest", pipeline::file_digest(p)}};
}

int cmd_synth(int n, std::uint64_t seed, const std::string& split_name, const fs::path& out, bool raw, int width,
              int height) {
    const data::Split split = data::parse_split(split_name);
    sampler::require_writable_dir(out);
    nlohmann::ordered_json d{{"n", n}, {"seed", seed}, {"split", split_name}, {"raw", raw}};
    if (raw) {
        data::write_synth_raw(out, n, seed, split, width, height);
        d["width"] = width;
        d["height"] = height;
        say("wrote " + std::to_string(n) + " raw scenes to " + out.string());
    } else {
        const fs::path m = data::write_synth(out, n, seed, split);
        d["manifest_digest"] = pipeline::file_digest(m);
        say("wrote " + m.string());
    }
    pipeline::write_run_record(out, "synth", d);
    return 0;
}

int cmd_curate(const fs::path& in, const fs::path& adapters, const fs::path& out) {
    const data::Adapters a = data::load_adapters(adapters);
    const fs::path root = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    sampler::require_writable_dir(root);
    const data::CurationReport report = data::curate(in, a, out);
    std::cout << report.to_json().dump(2) << "\n";
    pipeline::write_run_record(root, "curate",
                               {{"input", in.string()},
                                {"adapters", input_record(adapters)},
                                {"manifest", out.string()},
                                {"manifest_digest", pipeline::file_digest(out)},
                                {"accepted", report.accepted},
                                {"input_count", report.input_count}});
    return 0;
}

int cmd_train(const TrainFlags& flags, const fs::path& data_manifest, const fs::path& out,
              const std::optional<fs::path>& resume, bool force) {
    const train::TrainConfig config = flags.resolve();
    const auto samples = pipeline::load_samples(data_manifest);
    pipeline::TrainRunOptions opt;
    opt.resume = resume;
    opt.force = force;
    opt.progress = say;
    sampler::require_writable_dir(out);
    io::write_text_atomic(out / "config.json", config.to_json().dump(2) + "\n");
    const auto result = pipeline::train_run(config, samples, out, opt);
    pipeline::write_run_record(out, "train",
                               {{"config", config.to_json()},
                                {"config_hash", config.hash()},
                                {"seed", config.seed},
                                {"data", input_record(data_manifest)},
                                {"resumed_from", resume ? nlohmann::ordered_json(resume->string()) : nullptr},
                                {"checkpoint_digest", pipeline::file_digest(result.checkpoint)}});
    say("wrote " + result.checkpoint.string());
    return 0;
}

int cmd_sample(const fs::path& ckpt, const fs::path& manifest, const std::string& rows, int steps, std::uint64_t seed,
               const fs::path& out) {
    sampler::require_writable_dir(out);
    const auto model = train::load_model(ckpt);
    const auto all = data::read_manifest(manifest);
    const auto chosen = data::select_rows(all, rows);
    const fs::path root = manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path();
    const std::string tag = std::string(train::ablation_name(model->config().ablation)) + "_s" + std::to_string(seed) +
                            "_n" + std::to_string(steps);
    const auto result = sampler::sample_grid(*model, chosen, root, out, {steps, seed}, tag);
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& e : result.entries) {
        files.push_back({{"sample_id", e.sample_id}, {"file", e.file.filename().string()},
                         {"digest", pipeline::file_digest(e.file)}});
    }
    pipeline::write_run_record(out, "sample",
                               {{"checkpoint", input_record(ckpt)},
                                {"config_hash", model->config().hash()},
                                {"manifest", input_record(manifest)},
                                {"rows", rows},
                                {"steps", steps},
                                {"seed", seed},
                                {"images", files}});
    say("generated " + std::to_string(result.entries.size()) + " images in " + out.string());
    return 0;
}

int cmd_evaluate(const fs::path& gen, const fs::path& ref, const std::string& extractor_name, const fs::path& out,
                 int kid_subset, int kid_subsets, std::uint64_t seed) {
    const auto extractor = eval::make_extractor(extractor_name);
    auto root = [](const fs::path& m) { return m.parent_path().empty() ? fs::path(".") : m.parent_path(); };
    eval::EvalOptions opt;
    opt.kid = {kid_subset, kid_subsets, seed};
    const auto report =
        eval::evaluate(data::read_manifest(gen), root(gen), data::read_manifest(ref), root(ref), *extractor, opt);
    const fs::path dir = root(out);
    sampler::require_writable_dir(dir);
    io::write_text_atomic(out, report.to_json().dump(2) + "\n");
    std::cout << eval::comparison_table({{gen.stem().string(), report}});
    pipeline::write_run_record(dir, "evaluate",
                               {{"gen", input_record(gen)},
                                {"ref", input_record(ref)},
                                {"extractor", extractor->name()},
                                {"kid_subset", kid_subset},
                                {"kid_subsets", kid_subsets},
                                {"seed", seed},
                                {"report_digest", pipeline::file_digest(out)}});
    return 0;
}

int cmd_ablate(const std::string& preset, bool toy, const TrainFlags& flags, const fs::path& data_manifest,
               const fs::path& out, int eval_samples, int sample_steps) {
    if (preset != "table2") throw ValidationError("unknown preset '" + preset + "' (expected table2)");
    if (!toy) throw ValidationError("only the --toy scale is runnable on this build");
    pipeline::AblationOptions opt;
    opt.base = flags.resolve();
    opt.eval_samples = eval_samples;
    opt.sample_steps = sample_steps;
    opt.progress = say;
    const auto samples = pipeline::load_samples(data_manifest);
    const auto outcome = pipeline::run_ablation(samples, out, opt);
    std::cout << outcome.table;
    if (!outcome.full_is_best) say("note: full configuration does not have the lowest FID-Hand in this run");
    pipeline::write_run_record(out, "ablate",
                               {{"preset", preset},
                                {"config", opt.base.to_json()},
                                {"seed", opt.base.seed},
                                {"data", input_record(data_manifest)},
                                {"eval_samples", eval_samples},
                                {"sample_steps", sample_steps},
                                {"full_fid_hand_is_lowest", outcome.full_is_best}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hand-region conditioned diffusion: data, training, sampling and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pipeline::kToolVersion);
    std::function<int()> run;

    // synth
    auto* synth = app.add_subcommand("synth", "render procedural hand samples (or raw scenes for curation)");
    int synth_n = 0, synth_w = 640, synth_h = 576;
    std::uint64_t synth_seed = 0;
    std::string synth_split = "train";
    std::string synth_out;
    bool synth_raw = false;
    synth->add_option("--n", synth_n, "number of samples (>= 1)")->required();
    synth->add_option("--seed", synth_seed, "generator seed")->required();
    synth->add_option("--split", synth_split, "train | test")->required();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_flag("--raw", synth_raw, "write uncropped raw scenes with sidecars instead of samples");
    synth->add_option("--width", synth_w, "raw scene width (with --raw)");
    synth->add_option("--height", synth_h, "raw scene height (with --raw)");
    synth->callback([&] { run = [&] { return cmd_synth(synth_n, synth_seed, synth_split, synth_out, synth_raw, synth_w, synth_h); }; });

    // curate
    auto* curate = app.add_subcommand("curate", "curate raw photos into aligned samples and a manifest");
    std::string cur_in, cur_adapters, cur_out;
    curate->add_option("--in", cur_in, "raw source directory")->required();
    curate->add_option("--adapters", cur_adapters, "adapter config JSON")->required();
    curate->add_option("--out", cur_out, "output manifest path")->required();
    curate->callback([&] { run = [&] { return cmd_curate(cur_in, cur_adapters, cur_out); }; });

    // train
    auto* trn = app.add_subcommand("train", "train the conditioning branches on a manifest");
    TrainFlags train_flags;
    train_flags.add(trn, true);
    std::string train_data, train_out;
    std::optional<std::string> train_resume;
    bool train_force = false;
    trn->add_option("--data", train_data, "training manifest")->required();
    trn->add_option("--out", train_out, "run directory")->required();
    trn->add_option("--resume", train_resume, "checkpoint to resume from");
    trn->add_flag("--force", train_force, "resume even when the config hash differs");
    trn->callback([&] {
        run = [&] {
            std::optional<fs::path> r;
            if (train_resume) r = *train_resume;
            return cmd_train(train_flags, train_data, train_out, r, train_force);
        };
    });

    // sample
    auto* smp = app.add_subcommand("sample", "generate images for manifest rows");
    std::string smp_ckpt, smp_manifest, smp_rows = "all", smp_out;
    int smp_steps = 50;
    std::uint64_t smp_seed = 0;
    smp->add_option("--ckpt", smp_ckpt, "training checkpoint")->required();
    smp->add_option("--manifest", smp_manifest, "manifest supplying the conditions")->required();
    smp->add_option("--rows", smp_rows, "rows: all | indices | a-b ranges | sample ids, comma separated");
    smp->add_option("--steps", smp_steps, "reverse steps");
    smp->add_option("--seed", smp_seed, "sampling seed");
    smp->add_option("--out", smp_out, "output directory")->required();
    smp->callback([&] { run = [&] { return cmd_sample(smp_ckpt, smp_manifest, smp_rows, smp_steps, smp_seed, smp_out); }; });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "FID/KID and hand-crop FID/KID between two manifests");
    std::string ev_gen, ev_ref, ev_extractor = "surrogate", ev_out;
    int ev_subset = 100, ev_subsets = 100;
    std::uint64_t ev_seed = 0;
    ev->add_option("--gen", ev_gen, "generated-image manifest")->required();
    ev->add_option("--ref", ev_ref, "reference manifest")->required();
    ev->add_option("--extractor", ev_extractor, "surrogate | surrogate:<seed>");
    ev->add_option("--out", ev_out, "report file (JSON)")->required();
    ev->add_option("--kid-subset", ev_subset, "KID subset size");
    ev->add_option("--kid-subsets", ev_subsets, "number of KID subsets");
    ev->add_option("--seed", ev_seed, "seed for KID subset draws");
    ev->callback([&] { run = [&] { return cmd_evaluate(ev_gen, ev_ref, ev_extractor, ev_out, ev_subset, ev_subsets, ev_seed); }; });

    // ablate
    auto* abl = app.add_subcommand("ablate", "train and compare the ablation matrix");
    TrainFlags abl_flags;
    abl_flags.add(abl, false);
    std::string abl_preset, abl_data, abl_out;
    bool abl_toy = false;
    int abl_eval = 200, abl_steps = 10;
    abl->add_option("--preset", abl_preset, "table2")->required();
    abl->add_flag("--toy", abl_toy, "desk-scale models");
    abl->add_option("--data", abl_data, "training manifest")->required();
    abl->add_option("--out", abl_out, "output directory")->required();
    abl->add_option("--eval-samples", abl_eval, "generated images per configuration");
    abl->add_option("--sample-steps", abl_steps, "reverse steps per generated image");
    abl->callback([&] { run = [&] { return cmd_ablate(abl_preset, abl_toy, abl_flags, abl_data, abl_out, abl_eval, abl_steps); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }
    try {
        return run();
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}
