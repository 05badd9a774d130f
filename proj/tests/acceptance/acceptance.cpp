// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run all criteria
//   acceptance 1 4 9      run a subset
//
// Exit status is 0 when every selected hard criterion passes. The ablation
// ordering criterion reports SOFT-FAIL without failing the run when its
// report is produced but the ordering does not hold.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "handrawer/core/errors.hpp"
#include "handrawer/data/curation.hpp"
#include "handrawer/data/image_io.hpp"
#include "handrawer/data/raster.hpp"
#include "handrawer/data/synth.hpp"
#include "handrawer/diffusion/schedule.hpp"
#include "handrawer/eval/metrics.hpp"
#include "handrawer/fusion/ppzp.hpp"
#include "handrawer/mesh/mesh.hpp"
#include "handrawer/mesh/procedural.hpp"
#include "handrawer/pipeline/runs.hpp"
#include "handrawer/sampler/sampler.hpp"
#include "handrawer/train/trainer.hpp"
#include "../test_support.hpp"

using namespace handrawer;
using testing_support::random_tensor;
using testing_support::rel_err;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, soft_fail };

struct Outcome {
    Verdict verdict = Verdict::fail;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome judge(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

fs::path work_dir() {
    static const fs::path p = [] {
        fs::path d = fs::temp_directory_path() / "handrawer_acceptance";
        fs::create_directories(d);
        return d;
    }();
    return p;
}

fs::path fresh(const std::string& name) {
    fs::path p = work_dir() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!same_bits(a[i], b[i])) return false;
    }
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

// ---------------------------------------------------------------- 1

Outcome position_preservation() {
    CounterRng rng(2024, {1});
    const diffusion::Site scales[] = {diffusion::Site::down, diffusion::Site::mid, diffusion::Site::up};
    int outside_cells = 0, changed_inside = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int C = 2 + static_cast<int>(rng.below(7)), H = 4 + static_cast<int>(rng.below(21)),
                  W = 4 + static_cast<int>(rng.below(21)), c = 1 + static_cast<int>(rng.below(6)),
                  g = 2 + static_cast<int>(rng.below(7));
        double a = rng.uniform(), b = rng.uniform(), u = rng.uniform(), v = rng.uniform();
        if (a == b) b = std::min(1.0, a + 1e-3);
        if (u == v) v = std::min(1.0, u + 1e-3);
        const mesh::NormalizedBBox box{std::min(a, b), std::min(u, v), std::max(a, b), std::max(u, v)};
        nn::ParameterStore store(static_cast<std::uint64_t>(trial));
        auto site = fusion::InjectionSite::make(store, "site", scales[rng.below(3)], c, {C, H, W});
        site.weight->value = random_tensor(site.weight->value.shape(), 3 * trial + 1);
        site.bias->value = random_tensor(site.bias->value.shape(), 3 * trial + 2);
        const Tensor unet = random_tensor({C, H, W}, 7919 + trial, -4.0, 4.0);
        const Tensor feat = random_tensor({c, g, g}, 104729 + trial);
        Tensor fused;
        {
            ag::NoGradGuard ng;
            fused = fusion::inject(ag::constant(unet), ag::constant(feat), box, site).value();
        }
        const auto region = fusion::scaled_region(box, H, W);
        for (int ch = 0; ch < C; ++ch) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const bool inside = region.contains(y, x);
                    const bool changed = !same_bits(fused.at(ch, y, x), unet.at(ch, y, x));
                    if (!inside) {
                        ++outside_cells;
                        if (changed) {
                            return {Verdict::fail, fmt("trial %d: cell (%d,%d,%d) outside the region changed", trial,
                                                       ch, y, x)};
                        }
                    } else if (changed) {
                        ++changed_inside;
                    }
                }
            }
        }
    }
    return judge(changed_inside > 0, fmt("1000 triples, %d outside cells bit-identical, %d inside cells changed",
                                         outside_cells, changed_inside));
}

// ---------------------------------------------------------------- 2

Outcome zero_init_neutrality() {
    train::TrainConfig cfg;
    cfg.seed = 31;
    train::HandDiffusionModel model(cfg);
    ag::NoGradGuard ng;
    const int L = cfg.model.latent_size();
    CounterRng rng(5, {2});
    for (int i = 0; i < 50; ++i) {
        const auto sample = data::synth_sample(static_cast<std::uint64_t>(i), 77, data::Split::train).sample;
        const auto cond = model.condition(sample);
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.model.timesteps)));
        const ag::Var z = ag::constant(random_tensor({3, L, L}, 500 + i, -3.0, 3.0));
        const Tensor plain = model.base().forward({z, static_cast<double>(t), ag::constant(cond.text)}).value();
        const auto hand = model.hand_features(cond);
        const Tensor full = model.predict_noise(z, t, cond, &hand.fusion).value();
        if (!bit_identical(plain, full)) return {Verdict::fail, fmt("input %d differs from the base output", i)};
    }
    return {Verdict::pass, "50 random inputs bit-identical with control branch and injection sites attached"};
}

// ---------------------------------------------------------------- 3

Outcome gradient_correctness() {
    train::TrainConfig cfg;
    cfg.seed = 9;
    train::HandDiffusionModel model(cfg);
    // Zero-initialized projections would hide whole paths from the check.
    for (auto* p : model.store().all()) {
        if (!p->trainable) continue;
        bool all_zero = true;
        for (double v : p->value.values()) all_zero = all_zero && v == 0.0;
        if (all_zero) p->value = random_tensor(p->value.shape(), fnv1a64(p->name), -0.05, 0.05);
    }
    const auto prepared = model.prepare(data::synth_sample(4, 12, data::Split::train).sample);
    const int t = 23;
    Tensor eps(prepared.z0.shape());
    CounterRng(3, {4}).fill_normal(std::span<double>(eps.data(), eps.size()));
    const Tensor z_t = diffusion::forward_diffuse(prepared.z0, t, eps, model.schedule());
    auto loss = [&] {
        const auto hand = model.hand_features(prepared.cond);
        const ag::Var pred = model.predict_noise(ag::constant(z_t), t, prepared.cond, &hand.fusion);
        return ag::add(ag::mse(pred, ag::constant(eps)),
                       ag::scale(ag::mean_abs_diff(hand.reconstruction, ag::constant(prepared.recon_target)),
                                 cfg.lambda_rehand));
    };
    struct Group {
        const char* name;
        std::function<bool(const std::string&)> match;
    };
    const std::vector<Group> groups = {
        {"graph mesh encoder", [](const std::string& n) { return n.rfind("hand.mesh.", 0) == 0; }},
        {"depth encoder", [](const std::string& n) { return n.rfind("hand.depth", 0) == 0; }},
        {"cross-attention stack",
         [](const std::string& n) { return n.rfind("hand.", 0) == 0 && n.find(".cross") != std::string::npos; }},
        {"hand decoder", [](const std::string& n) { return n.rfind("hand.decoder.", 0) == 0; }},
        {"injection projections", [](const std::string& n) { return n.rfind("fusion.", 0) == 0; }},
    };
    std::string detail;
    bool ok = true;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        std::vector<nn::Parameter*> params;
        for (auto* p : model.store().all()) {
            if (p->trainable && g.match(p->name)) params.push_back(p);
        }
        if (params.empty()) return {Verdict::fail, std::string("no parameters in group ") + g.name};
        double worst = 0;
        int nonzero = 0, skipped = 0;
        for (std::uint64_t subset = 0; subset < 3; ++subset) {
            const auto r = testing_support::grad_check(params, loss, 6, 1000 + 10 * gi + subset, 1e-4, true);
            worst = std::max(worst, r.max_rel_err);
            nonzero += r.nonzero;
            skipped += r.skipped;
        }
        ok = ok && worst < 1e-4 && nonzero > 0;
        detail += fmt("%s%s %.1e", detail.empty() ? "" : ", ", g.name, worst);
        if (skipped) detail += fmt(" (%d kink draws replaced)", skipped);
    }
    return judge(ok, "max rel err over 3 subsets: " + detail);
}

// ---------------------------------------------------------------- 4

Outcome loss_identities() {
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = random_tensor({3, 7, 9}, 10 + trial), b = random_tensor({3, 7, 9}, 40 + trial);
        double mse = 0, l1 = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 7; ++y)
                for (int x = 0; x < 9; ++x) {
                    mse += std::pow(a.at(c, y, x) - b.at(c, y, x), 2);
                    l1 += std::fabs(a.at(c, y, x) - b.at(c, y, x));
                }
        mse /= 3 * 7 * 9;
        l1 /= 3 * 7 * 9;
        worst = std::max({worst, std::abs(train::loss_denoise(a, b) - mse), std::abs(train::loss_rehand(a, b) - l1),
                          std::abs(train::loss_denoise(ag::constant(a), ag::constant(b)).value()[0] - mse),
                          std::abs(train::loss_rehand(ag::constant(a), ag::constant(b)).value()[0] - l1)});
    }
    if (worst >= 1e-12) return {Verdict::fail, fmt("loop oracle mismatch %.2e", worst)};

    train::TrainConfig cfg = train::tiny_config();
    if (cfg.lambda_rehand != 0.1) return {Verdict::fail, "default reconstruction weight is not 0.1"};
    std::vector<train::PreparedSample> data;
    {
        train::HandDiffusionModel m(cfg);
        for (int i = 0; i < 3; ++i) data.push_back(m.prepare(data::synth_sample(i, 5, data::Split::train).sample));
    }
    train::Trainer tr(cfg, data);
    double identity = 0;
    for (int i = 0; i < 5; ++i) {
        const auto l = tr.step();
        identity = std::max(identity, std::abs(l.total - (l.denoise + 0.1 * l.rehand)));
    }
    if (identity > 1e-12) return {Verdict::fail, fmt("total differs from denoise + 0.1 rehand by %.2e", identity)};

    cfg.lambda_rehand = 0.0;
    cfg.fusion = false;
    train::Trainer off(cfg, data);
    int decoder_params = 0;
    bool all_zero = true;
    off.loss_hook = [&](train::LossBreakdown&) {
        for (auto* p : off.model().store().all()) {
            if (p->name.rfind("hand.decoder.", 0) != 0) continue;
            ++decoder_params;
            for (double g : p->grad.values()) all_zero = all_zero && g == 0.0;
        }
    };
    off.step();
    off.step();
    return judge(all_zero && decoder_params > 0,
                 fmt("oracle err %.1e, identity err %.1e, %d decoder gradients exactly zero at lambda 0", worst,
                     identity, decoder_params));
}

// ---------------------------------------------------------------- 5

Outcome keypoint_regression() {
    double worst = 0;
    bool exact = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const int V = 10 + static_cast<int>(seed) * 7;
        mesh::HandMesh m;
        m.vertices = random_tensor({V, 3}, seed, -5.0, 5.0);
        for (int i = 1; i < V; ++i) m.edges.push_back({i - 1, i});
        Tensor w({mesh::kKeypoints, V});
        CounterRng rng(seed, {3});
        for (int r = 0; r < mesh::kKeypoints; ++r) {
            double s = 0;
            for (int c = 0; c < V; ++c) s += (w.at(r, c) = rng.uniform());
            for (int c = 0; c < V; ++c) w.at(r, c) /= s;
        }
        const auto reg = mesh::KeypointRegressor::from_dense(w);
        const Tensor p = mesh::keypoints_from_vertices(m, reg);
        for (int i = 0; i < mesh::kKeypoints; ++i)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int j = 0; j < V; ++j) s += w.at(i, j) * m.vertices.at(j, c);
                worst = std::max(worst, std::abs(s - p.at(i, c)));
            }

        Tensor onehot({mesh::kKeypoints, V});
        for (int i = 0; i < mesh::kKeypoints; ++i) onehot.at(i, (5 * i + static_cast<int>(seed)) % V) = 1.0;
        const Tensor q = mesh::keypoints_from_vertices(m, mesh::KeypointRegressor::from_dense(onehot));
        for (int i = 0; i < mesh::kKeypoints; ++i)
            for (int c = 0; c < 3; ++c) exact = exact && q.at(i, c) == m.vertices.at((5 * i + static_cast<int>(seed)) % V, c);

        // Power-of-two shifts and dyadic weights keep translation exact.
        Tensor dyadic({mesh::kKeypoints, V});
        for (int i = 0; i < mesh::kKeypoints; ++i) {
            dyadic.at(i, i % V) = 0.5;
            dyadic.at(i, (i + 1) % V) += 0.25;
            dyadic.at(i, (i + 3) % V) += 0.25;
        }
        const auto dreg = mesh::KeypointRegressor::from_dense(dyadic);
        mesh::HandMesh grid = m;
        for (double& v : grid.vertices.storage()) v = std::round(v * 8) / 8;
        const Tensor before = mesh::keypoints_from_vertices(grid, dreg);
        const double shift[3] = {0.5, -2.0, 4.0};
        for (int v = 0; v < V; ++v)
            for (int c = 0; c < 3; ++c) grid.vertices.at(v, c) += shift[c];
        const Tensor after = mesh::keypoints_from_vertices(grid, dreg);
        for (int i = 0; i < mesh::kKeypoints; ++i)
            for (int c = 0; c < 3; ++c) exact = exact && after.at(i, c) == before.at(i, c) + shift[c];
    }
    if (worst >= 1e-12 || !exact) return {Verdict::fail, fmt("oracle err %.2e, exact cases %s", worst, exact ? "ok" : "broken")};

    const auto samples = data::synth_generate(36, 19, data::Split::train);
    const auto& reg = mesh::procedural_topology().regressor;
    double worst_px = 0;
    for (const auto& s : samples) {
        const Tensor kp = mesh::keypoints_from_vertices(s.sample.mesh, reg);
        for (int j = 0; j < mesh::kKeypoints; ++j) {
            worst_px = std::max(worst_px, std::hypot(kp.at(j, 0) - s.joints_px.at(j, 0), kp.at(j, 1) - s.joints_px.at(j, 1)));
        }
    }
    return judge(worst_px < 3.0, fmt("oracle err %.1e, one-hot and translation exact, worst joint error %.3f px over %zu synthetic samples",
                                     worst, worst_px, samples.size()));
}

// ---------------------------------------------------------------- 6

train::TrainConfig overfit_config() {
    train::TrainConfig c;
    c.steps = 500;
    c.batch = 4;
    c.optimizer = train::OptimizerKind::adam;
    c.lr = 1e-3;
    c.seed = 1;
    return c;
}

std::vector<data::MultimodalSample> overfit_samples() {
    std::vector<data::MultimodalSample> out;
    for (std::uint64_t i = 0; i < 8; ++i) out.push_back(data::synth_sample(i * 2, 1, data::Split::train).sample);
    return out;
}

fs::path overfit_checkpoint() { return work_dir() / "overfit" / "final.ckpt"; }

Outcome overfit_smoke() {
    const auto cfg = overfit_config();
    const auto samples = overfit_samples();
    const fs::path dir = fresh("overfit");
    pipeline::TrainRunOptions opt;
    opt.log_every = 50;
    opt.progress = [](const std::string& m) { std::fprintf(stderr, "  overfit: %s\n", m.c_str()); };
    const auto run = pipeline::train_run(cfg, samples, dir, opt);
    const auto& l = run.losses;
    if (l.size() != 500) return {Verdict::fail, fmt("expected 500 steps, ran %zu", l.size())};
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += l[static_cast<std::size_t>(i)].total / 10;
        last += l[l.size() - 10 + static_cast<std::size_t>(i)].total / 10;
    }
    const double drop = 1.0 - last / first;

    const auto model = train::load_model(run.checkpoint);
    int hits = 0;
    std::string picks;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Tensor img = sampler::sample_image(*model, model->condition(samples[i]), {50, 1000 + i});
        const Tensor crop = data::crop_on_bbox(img, samples[i].bbox, 225);
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t j = 0; j < samples.size(); ++j) {
            const double d = train::loss_rehand(crop, samples[j].hand_rgb);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        hits += best == i;
        picks += std::to_string(best);
    }
    return judge(drop >= 0.5 && hits >= 6, fmt("loss %.4f -> %.4f (%.0f%% drop), identified %d/8 (nearest targets %s)",
                                               first, last, 100 * drop, hits, picks.c_str()));
}

// ---------------------------------------------------------------- 7

Outcome ablation_ordering() {
    pipeline::AblationOptions opt;
    opt.base = overfit_config();
    opt.eval_samples = 200;
    opt.sample_steps = 10;
    opt.progress = [](const std::string& m) { std::fprintf(stderr, "  ablation: %s\n", m.c_str()); };
    if (fs::exists(overfit_checkpoint())) opt.pretrained[train::Ablation::full] = overfit_checkpoint();
    const fs::path dir = fresh("ablation");
    const auto out = pipeline::run_ablation(overfit_samples(), dir, opt);
    if (!fs::exists(dir / "comparison.json")) return {Verdict::fail, "comparison report missing"};
    std::string detail = "FID-Hand";
    for (const auto& [name, r] : out.reports) detail += fmt(" %s=%.4f", name.c_str(), r.fid_hand);
    std::fprintf(stderr, "%s", out.table.c_str());
    return {out.full_is_best ? Verdict::pass : Verdict::soft_fail,
            detail + (out.full_is_best ? "" : " (full is not the lowest; see comparison.txt)")};
}

// ---------------------------------------------------------------- 8

Tensor gaussian_set(int n, int d, double mean, double sd, std::uint64_t seed) {
    Tensor t({n, d});
    CounterRng rng(seed, {0});
    for (double& v : t.storage()) v = mean + sd * rng.normal();
    return t;
}

double mmd2_loops(const Tensor& x, const Tensor& y) {
    const int m = x.dim(0), n = y.dim(0), d = x.dim(1);
    auto k = [d](const Tensor& a, int i, const Tensor& b, int j) {
        double dot = 0;
        for (int c = 0; c < d; ++c) dot += a.at(i, c) * b.at(j, c);
        return std::pow(dot / d + 1.0, 3);
    };
    double sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            if (i != j) sxx += k(x, i, x, j);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) syy += k(y, i, y, j);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) sxy += k(x, i, y, j);
    return sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2 * sxy / (static_cast<double>(m) * n);
}

Outcome metric_correctness() {
    const Tensor a = gaussian_set(500, 16, 0.0, 1.0, 1);
    const double self = std::abs(eval::fid(a, a));
    // Two unit-variance 1-d Gaussians one apart: FID = 1.
    const double closed = std::abs(eval::fid(gaussian_set(100000, 1, 0, 1, 2), gaussian_set(100000, 1, 1, 1, 3)) - 1.0);
    double kid_err = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = gaussian_set(10 + 10 * trial, 6, 0, 1, 30 + trial), y = gaussian_set(50 - 8 * trial, 6, 0.3, 1.2, 40 + trial);
        kid_err = std::max(kid_err, std::abs(eval::mmd2_unbiased(x, y) - mmd2_loops(x, y)));
    }
    const Tensor b = gaussian_set(300, 16, 0.2, 1.5, 4);
    const double sym = std::abs(eval::fid(a, b) - eval::fid(b, a));
    return judge(self < 1e-6 && closed < 0.05 && kid_err < 1e-10 && sym < 1e-8,
                 fmt("self %.1e, closed-form err %.4f, KID oracle err %.1e, symmetry %.1e", self, closed, kid_err, sym));
}

// ---------------------------------------------------------------- 9

bool verbatim_block(const Tensor& crop, const Tensor& src, int ox, int oy) {
    for (int c = 0; c < crop.dim(0); ++c)
        for (int y = 0; y < crop.dim(1); ++y)
            for (int x = 0; x < crop.dim(2); ++x) {
                if (crop.at(c, y, x) != src.at(c, oy + y, ox + x)) return false;
            }
    return true;
}

Outcome curation_accounting() {
    const fs::path raw = fresh("raw");
    data::write_synth_raw(raw, 12, 8, data::Split::train);
    const auto items = data::scan_raw(raw);
    std::ofstream(raw / "accept.txt") << items[1].sample_id << "\n" << items[4].sample_id << "\n" << items[9].sample_id << "\n";
    CounterRng rng(41, {9});
    int runs = 0;
    for (int trial = 0; trial < 8; ++trial) {
        nlohmann::json cfg = {{"seed", trial},
                              {"pose_filter", {{"kind", "mock"}, {"reject_rate", rng.uniform() * 0.4}}},
                              {"depth", {{"kind", "mock"}, {"reject_rate", rng.uniform() * 0.4}}},
                              {"mesh", {{"kind", "mock"}, {"reject_rate", rng.uniform() * 0.4}}},
                              {"caption", {{"kind", "mock"}, {"reject_rate", rng.uniform() * 0.4}}}};
        if (trial % 3 == 2) cfg["pose_filter"]["reject_every"] = 3;
        if (trial % 2) cfg["accept_list"] = "accept.txt";
        const fs::path out = fresh("curated");
        const auto rep = data::curate(raw, data::make_adapters(cfg, raw), out / "manifest.jsonl");
        if (rep.input_count != 12 || rep.input_count != rep.accepted + rep.rejected_total()) {
            return {Verdict::fail, fmt("trial %d: %zu inputs, %zu accepted, %zu rejected", trial, rep.input_count,
                                       rep.accepted, rep.rejected_total())};
        }
        if (data::read_manifest(out / "manifest.jsonl").size() != rep.accepted) {
            return {Verdict::fail, fmt("trial %d: manifest row count differs from the report", trial)};
        }
        ++runs;
    }

    const Tensor big = random_tensor({3, 700, 620}, 3);
    int crops = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const double cx = rng.uniform() * 700 - 40, cy = rng.uniform() * 780 - 40;
        for (int size : {512, 225}) {
            const Tensor c = data::crop_centered(big, cx, cy, size);
            const int ox = std::clamp(static_cast<int>(std::floor(cx - size / 2.0 + 0.5)), 0, 620 - size);
            const int oy = std::clamp(static_cast<int>(std::floor(cy - size / 2.0 + 0.5)), 0, 700 - size);
            if (c.dim(1) != size || c.dim(2) != size || !verbatim_block(c, big, ox, oy)) {
                return {Verdict::fail, fmt("%d crop at (%.1f, %.1f) is not the expected sub-block", size, cx, cy)};
            }
            ++crops;
        }
        const Tensor im = random_tensor({3, 512, 512}, 100 + trial);
        const double x0 = rng.uniform() * 0.9, y0 = rng.uniform() * 0.9;
        const mesh::NormalizedBBox box{x0, y0, x0 + 0.02 + rng.uniform() * (0.98 - x0), y0 + 0.02 + rng.uniform() * (0.98 - y0)};
        const Tensor h = eval::crop_hand_299(im, box);
        const int ox = std::clamp(static_cast<int>(std::floor(box.cx() * 512 - 149.5 + 0.5)), 0, 512 - 299);
        const int oy = std::clamp(static_cast<int>(std::floor(box.cy() * 512 - 149.5 + 0.5)), 0, 512 - 299);
        if (h.dim(1) != 299 || !verbatim_block(h, im, ox, oy)) return {Verdict::fail, "299 hand crop is not a sub-block"};
        ++crops;
    }

    nlohmann::json det = {{"seed", 2},
                          {"pose_filter", {{"kind", "mock"}, {"reject_rate", 0.2}}},
                          {"depth", {{"kind", "oracle"}}},
                          {"mesh", {{"kind", "oracle"}}},
                          {"caption", {{"kind", "mock"}}}};
    const fs::path a = fresh("det_a"), b = fresh("det_b");
    data::curate(raw, data::make_adapters(det, raw), a / "manifest.jsonl");
    data::curate(raw, data::make_adapters(det, raw), b / "manifest.jsonl");
    const bool same = slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl") &&
                      slurp(a / "curation_report.json") == slurp(b / "curation_report.json");
    return judge(same, fmt("%d randomized runs balance, %d crops are verbatim sub-blocks, manifest bytes %s", runs,
                           crops, same ? "identical" : "differ"));
}

// ---------------------------------------------------------------- 10

Outcome determinism_and_resume() {
    train::TrainConfig cfg = train::tiny_config();
    cfg.steps = 6;
    cfg.optimizer = train::OptimizerKind::adam;
    cfg.lr = 1e-3;
    cfg.seed = 12;
    std::vector<data::MultimodalSample> samples;
    for (std::uint64_t i = 0; i < 4; ++i) samples.push_back(data::synth_sample(i, 21, data::Split::train).sample);
    const fs::path data_dir = fresh("det_data");
    const fs::path manifest = data::write_synth(data_dir, 4, 21, data::Split::train);

    std::vector<std::string> digests;
    for (const char* run : {"det_train_a", "det_train_b"}) {
        const auto r = pipeline::train_run(cfg, samples, fresh(run));
        digests.push_back(pipeline::file_digest(r.checkpoint));
    }
    const bool train_same = digests[0] == digests[1];

    const auto model = train::load_model(work_dir() / "det_train_a" / "final.ckpt");
    const auto rows = data::read_manifest(manifest);
    std::vector<std::string> images;
    for (const char* run : {"det_sample_a", "det_sample_b"}) {
        const auto g = sampler::sample_grid(*model, rows, data_dir, fresh(run), {5, 77}, "det");
        std::string all;
        for (const auto& e : g.entries) all += pipeline::file_digest(e.file);
        if (g.montage) all += pipeline::file_digest(*g.montage);
        images.push_back(all);
    }
    const bool sample_same = images[0] == images[1];

    const auto gen_rows = data::read_manifest(work_dir() / "det_sample_a" / "manifest__det.jsonl");
    const auto extractor = eval::make_extractor("surrogate");
    eval::EvalOptions eo;
    eo.kid = {3, 10, 4};
    const auto r1 = eval::evaluate(gen_rows, work_dir() / "det_sample_a", rows, data_dir, *extractor, eo);
    const auto r2 = eval::evaluate(gen_rows, work_dir() / "det_sample_a", rows, data_dir, *extractor, eo);
    const bool eval_same = r1.to_json().dump() == r2.to_json().dump();

    std::vector<train::PreparedSample> prepared;
    {
        train::HandDiffusionModel m(cfg);
        for (const auto& s : samples) prepared.push_back(m.prepare(s));
    }
    train::Trainer straight(cfg, prepared);
    for (int i = 0; i < 5; ++i) straight.step();
    const fs::path mid = fresh("det_resume") / "mid.ckpt";
    straight.save(mid);
    train::Trainer resumed(cfg, prepared);
    resumed.load(mid);
    bool resume_same = resumed.step_index() == 5;
    for (int i = 0; i < 10; ++i) {
        const auto a = straight.step(), b = resumed.step();
        resume_same = resume_same && same_bits(a.total, b.total) && same_bits(a.denoise, b.denoise) &&
                      same_bits(a.rehand, b.rehand);
    }
    auto pa = straight.model().store().all(), pb = resumed.model().store().all();
    for (std::size_t i = 0; i < pa.size() && resume_same; ++i) resume_same = bit_identical(pa[i]->value, pb[i]->value);

    return judge(train_same && sample_same && eval_same && resume_same,
                 fmt("train %s, sample %s, evaluate %s, resume over 10 steps %s", train_same ? "identical" : "DIFFERS",
                     sample_same ? "identical" : "DIFFERS", eval_same ? "identical" : "DIFFERS",
                     resume_same ? "bit-exact" : "DIVERGES"));
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "position preservation", 60, position_preservation},
        {2, "zero-init neutrality", 60, zero_init_neutrality},
        {3, "gradient correctness", 600, gradient_correctness},
        {4, "loss identities", 60, loss_identities},
        {5, "keypoint regression", 60, keypoint_regression},
        {6, "overfit smoke test", 1200, overfit_smoke},
        {7, "ablation ordering", 3600, ablation_ordering},
        {8, "metric correctness", 300, metric_correctness},
        {9, "curation accounting", 120, curation_accounting},
        {10, "determinism and resume", 600, determinism_and_resume},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        try {
            selected.insert(std::stoi(argv[i]));
        } catch (const std::exception&) {
            std::fprintf(stderr, "usage: acceptance [criterion numbers 1-10]\n");
            return 2;
        }
    }
    int failures = 0;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {Verdict::fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (o.verdict != Verdict::fail && secs > c.budget_s) {
            o.verdict = Verdict::fail;
            o.detail += fmt("; exceeded the %.0f s budget", c.budget_s);
        }
        const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::soft_fail ? "SOFT-FAIL" : "FAIL";
        std::printf("[%s] %2d %s: %s (%.1f s)\n", tag, c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += o.verdict == Verdict::fail;
    }
    return failures == 0 ? 0 : 1;
}
