#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "handrawer/core/binary_io.hpp"
#include "handrawer/core/errors.hpp"
#include "handrawer/data/synth.hpp"
#include "handrawer/train/trainer.hpp"
#include "test_support.hpp"

using namespace handrawer;
using namespace handrawer::train;
using testing_support::random_tensor;
namespace fs = std::filesystem;

namespace {

std::vector<PreparedSample> tiny_data(const TrainConfig& c, int n) {
    HandDiffusionModel m(c);
    std::vector<PreparedSample> out;
    for (int i = 0; i < n; ++i) out.push_back(m.prepare(data::synth_sample(i * 5, 3, data::Split::train).sample));
    return out;
}

std::map<std::string, Tensor> snapshot(HandDiffusionModel& m) {
    std::map<std::string, Tensor> out;
    for (auto* p : m.store().all()) out[p->name] = p->value;
    return out;
}

double oracle_mse(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (int c = 0; c < a.dim(0); ++c)
        for (int y = 0; y < a.dim(1); ++y)
            for (int x = 0; x < a.dim(2); ++x) s += std::pow(a.at(c, y, x) - b.at(c, y, x), 2);
    return s / (a.dim(0) * a.dim(1) * a.dim(2));
}

double oracle_l1(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (int c = 0; c < a.dim(0); ++c)
        for (int y = 0; y < a.dim(1); ++y)
            for (int x = 0; x < a.dim(2); ++x) s += std::fabs(a.at(c, y, x) - b.at(c, y, x));
    return s / (a.dim(0) * a.dim(1) * a.dim(2));
}

}  // namespace

TEST_CASE("denoising loss: identities and loop oracle") {
    const Tensor a = random_tensor({3, 8, 8}, 1);
    CHECK(loss_denoise(a, a) == 0.0);
    Tensor b = a;
    for (double& v : b.storage()) v += 1.0;
    CHECK(loss_denoise(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({3, 6, 7}, 10 + trial), y = random_tensor({3, 6, 7}, 20 + trial);
        CHECK(std::abs(loss_denoise(x, y) - oracle_mse(x, y)) < 1e-12);
        CHECK(std::abs(loss_denoise(ag::constant(x), ag::constant(y)).value()[0] - oracle_mse(x, y)) < 1e-12);
    }
    CHECK_THROWS_AS(loss_denoise(a, random_tensor({3, 8, 7}, 2)), ValidationError);
}

TEST_CASE("reconstruction loss: identities, loop oracle and shape errors") {
    const Tensor t = random_tensor({3, 9, 9}, 3, 0.0, 0.75);
    CHECK(loss_rehand(t, t) == 0.0);
    Tensor r = t;
    for (double& v : r.storage()) v += 0.25;
    CHECK(loss_rehand(t, r) == doctest::Approx(0.25).epsilon(1e-14));
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({3, 5, 5}, 30 + trial, 0, 1), y = random_tensor({3, 5, 5}, 40 + trial, 0, 1);
        CHECK(std::abs(loss_rehand(x, y) - oracle_l1(x, y)) < 1e-12);
        CHECK(std::abs(loss_rehand(ag::constant(x), ag::constant(y)).value()[0] - oracle_l1(x, y)) < 1e-12);
    }
    CHECK_THROWS_AS(loss_rehand(t, random_tensor({3, 9, 8}, 4)), ValidationError);
    CHECK_THROWS_AS(loss_rehand(random_tensor({1, 9, 9}, 5), random_tensor({1, 9, 9}, 6)), ValidationError);
}

TEST_CASE("total loss is the exact weighted sum") {
    CHECK(total_loss(0.7, 3.0, 0.0) == 0.7);
    CHECK(total_loss(1.0, 2.0, 0.1) == doctest::Approx(1.2).epsilon(1e-15));
    CounterRng rng(4, {0});
    for (int i = 0; i < 20; ++i) {
        const double x = rng.uniform() * 10;
        CHECK(total_loss(x, x, 1.0) == 2 * x);
        const auto b = breakdown(x, 0.5 * x, 0.1);
        CHECK(std::abs(b.total - (b.denoise + 0.1 * b.rehand)) < 1e-9);
    }
    CHECK_THROWS_AS(total_loss(1, 1, -0.1), ValidationError);
}

TEST_CASE("training config validation, layering and hashing") {
    TrainConfig c;
    CHECK(c.lambda_rehand == 0.1);
    CHECK(c.steps == 2000);
    CHECK(c.lr == 1e-4);
    CHECK(c.batch == 4);
    c.validate();
    TrainConfig bad = c;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.lr = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = c;
    bad.lambda_rehand = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    TrainConfig longer = c;
    longer.steps = 5;
    CHECK(longer.hash() == c.hash());
    TrainConfig other = c;
    other.ablation = Ablation::without_graph;
    CHECK(other.hash() != c.hash());
    other = c;
    other.lr = 2e-4;
    CHECK(other.hash() != c.hash());

    TrainConfig layered;
    layered.apply_json({{"lr", 0.5}, {"model", {{"hand", {{"width", 32}}}}}});
    layered.apply_json({{"lr", 0.25}});
    CHECK(layered.lr == 0.25);
    CHECK(layered.model.hand.width == 32);
    CHECK_THROWS_AS(layered.apply_json({{"learning_rate", 1}}), ValidationError);
    CHECK_THROWS_AS(layered.apply_json({{"ablation", "no_hands"}}), ValidationError);
    CHECK_THROWS_AS(layered.apply_json({{"optimizer", "lion"}}), ValidationError);
}

TEST_CASE("ablation presets change only their documented parameters") {
    auto names = [](Ablation a) {
        TrainConfig c = tiny_config();
        c.ablation = a;
        HandDiffusionModel m(c);
        std::map<std::string, std::vector<int>> out;
        for (auto* p : m.store().all()) out[p->name] = p->value.shape();
        return out;
    };
    const auto full = names(Ablation::full);
    CHECK(names(Ablation::without_ppzp) == full);
    auto diff = [&](const std::map<std::string, std::vector<int>>& other) {
        std::set<std::string> d;
        for (const auto& [n, s] : full) {
            auto it = other.find(n);
            if (it == other.end() || it->second != s) d.insert(n);
        }
        for (const auto& [n, s] : other) {
            if (!full.count(n)) d.insert(n);
        }
        return d;
    };
    for (const auto& n : diff(names(Ablation::without_graph))) {
        CHECK((n.rfind("hand.mesh.gcn", 0) == 0 || n.rfind("hand.mesh.mlp", 0) == 0));
    }
    for (const auto& n : diff(names(Ablation::without_3dmesh))) {
        const bool ok = n.rfind("hand.mesh.", 0) == 0 || n.rfind("hand.sa3.", 0) == 0 ||
                        n.rfind("hand.down.cross2.", 0) == 0 || n == "hand.down.merge1.weight";
        CHECK_MESSAGE(ok, n);
    }
    CHECK(diff(names(Ablation::without_3dmesh)).count("hand.down.merge1.weight") == 1);
    CHECK(parse_ablation("without_ppzp") == Ablation::without_ppzp);
    CHECK_THROWS_AS(parse_ablation("without_text"), ValidationError);
}

TEST_CASE("frozen parameters stay bit-identical while trainable ones move") {
    TrainConfig c = tiny_config();
    c.lr = 1e-2;
    Trainer tr(c, tiny_data(c, 3));
    const auto before = snapshot(tr.model());
    for (int i = 0; i < 10; ++i) tr.step();
    int frozen = 0, moved = 0;
    for (auto* p : tr.model().store().all()) {
        if (p->name.rfind("base.", 0) == 0) {
            CHECK(!p->trainable);
            CHECK(bit_equal(p->value, before.at(p->name)));
            ++frozen;
        } else if (!bit_equal(p->value, before.at(p->name))) {
            ++moved;
        }
    }
    CHECK(frozen > 0);
    CHECK(moved > 0);
}

TEST_CASE("training is deterministic for a fixed seed") {
    TrainConfig c = tiny_config();
    c.optimizer = OptimizerKind::adam;
    c.lr = 1e-3;
    const auto data = tiny_data(c, 3);
    Trainer a(c, data), b(c, data);
    for (int i = 0; i < 4; ++i) {
        const auto la = a.step(), lb = b.step();
        CHECK(la.total == lb.total);
        CHECK(la.rehand == lb.rehand);
    }
    c.seed = 99;
    Trainer d(c, data);
    CHECK(d.step().total != Trainer(tiny_config(), data).step().total);
}

TEST_CASE("loss identity holds at every step") {
    TrainConfig c = tiny_config();
    Trainer tr(c, tiny_data(c, 2));
    for (int i = 0; i < 3; ++i) {
        const auto l = tr.step();
        CHECK(std::abs(l.total - (l.denoise + c.lambda_rehand * l.rehand)) < 1e-9);
        CHECK(l.denoise >= 0);
        CHECK(l.rehand >= 0);
    }
}

TEST_CASE("a non-finite loss aborts the step and leaves state unchanged") {
    TrainConfig c = tiny_config();
    Trainer tr(c, tiny_data(c, 2));
    tr.step();
    tr.step();
    const auto before = snapshot(tr.model());
    tr.loss_hook = [](LossBreakdown& l) { l.total = std::nan(""); };
    try {
        tr.step();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("step 2") != std::string::npos);
    }
    CHECK(tr.step_index() == 2);
    for (auto* p : tr.model().store().all()) CHECK(bit_equal(p->value, before.at(p->name)));
    tr.loss_hook = nullptr;
    tr.step();
    CHECK(tr.step_index() == 3);
}

TEST_CASE("lambda 0 with fusion disabled gives exactly zero decoder gradients") {
    TrainConfig c = tiny_config();
    c.lambda_rehand = 0.0;
    c.fusion = false;
    Trainer tr(c, tiny_data(c, 2));
    HandDiffusionModel* m = &tr.model();
    int checked = 0;
    tr.loss_hook = [&](LossBreakdown&) {
        for (auto* p : m->store().all()) {
            if (p->name.rfind("hand.decoder.", 0) != 0) continue;
            ++checked;
            if (!p->grad.empty()) {
                for (double g : p->grad.values()) REQUIRE(g == 0.0);
            }
        }
    };
    tr.step();
    tr.step();
    CHECK(checked == 8);
}

TEST_CASE("every trainable parameter group receives gradient in the full config") {
    TrainConfig c = tiny_config();
    c.lr = 1e-2;
    Trainer tr(c, tiny_data(c, 2));
    HandDiffusionModel* m = &tr.model();
    std::map<std::string, double> norms;
    auto group = [](const std::string& name) {
        const auto a = name.find('.');
        const auto b = name.find('.', a + 1);
        return name.substr(0, b);
    };
    tr.loss_hook = [&](LossBreakdown&) {
        for (auto* p : m->trainable()) {
            double s = 0;
            if (!p->grad.empty())
                for (double g : p->grad.values()) s += g * g;
            norms[group(p->name)] += s;
        }
    };
    for (int i = 0; i < 3; ++i) tr.step();
    CHECK(norms.size() > 15);
    for (const auto& [g, n] : norms) CHECK_MESSAGE(n > 0.0, g);
}

TEST_CASE("batches visit every sample once per epoch") {
    for (std::size_t n : {1u, 5u, 8u}) {
        std::vector<int> seen(n, 0);
        for (int step = 0; step < static_cast<int>(n); ++step)
            for (auto i : batch_indices(n, 4, step, 7)) seen[i] += 1;
        for (int v : seen) CHECK(v == 4);
    }
    CHECK(batch_indices(8, 4, 3, 1) == batch_indices(8, 4, 3, 1));
    CHECK(batch_indices(8, 4, 0, 1) != batch_indices(8, 4, 0, 2));
}

TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
    const fs::path dir = fs::temp_directory_path() / "handrawer_test_resume";
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig c = tiny_config();
    c.optimizer = OptimizerKind::adam;
    c.lr = 1e-3;
    const auto data = tiny_data(c, 3);
    Trainer straight(c, data);
    for (int i = 0; i < 4; ++i) straight.step();
    straight.save(dir / "k.ckpt");
    Trainer resumed(c, data);
    resumed.load(dir / "k.ckpt");
    CHECK(resumed.step_index() == 4);
    for (int i = 0; i < 10; ++i) {
        const auto a = straight.step(), b = resumed.step();
        CHECK(a.total == b.total);
        CHECK(a.denoise == b.denoise);
    }
    const auto sa = snapshot(straight.model()), sb = snapshot(resumed.model());
    for (const auto& [n, t] : sa) CHECK(bit_equal(t, sb.at(n)));
}

TEST_CASE("resume refuses mismatched configs and corrupt files") {
    const fs::path dir = fs::temp_directory_path() / "handrawer_test_resume_bad";
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig c = tiny_config();
    const auto data = tiny_data(c, 2);
    Trainer tr(c, data);
    tr.step();
    tr.save(dir / "a.ckpt");

    TrainConfig other = c;
    other.ablation = Ablation::without_graph;
    Trainer wrong(other, data);
    CHECK_THROWS_AS(wrong.load(dir / "a.ckpt"), ValidationError);
    CHECK_THROWS_AS(wrong.load(dir / "a.ckpt", true), ValidationError);  // structure differs even when forced

    TrainConfig lr = c;
    lr.lr = 5e-3;
    Trainer forced(lr, data);
    CHECK_THROWS_AS(forced.load(dir / "a.ckpt"), ValidationError);
    forced.load(dir / "a.ckpt", true);
    CHECK(forced.step_index() == 1);

    auto bytes = io::read_file(dir / "a.ckpt");
    bytes[bytes.size() / 2] ^= 0x10;
    io::write_file_atomic(dir / "b.ckpt", bytes);
    Trainer fresh(c, data);
    const auto before = snapshot(fresh.model());
    CHECK_THROWS_AS(fresh.load(dir / "b.ckpt"), IntegrityError);
    CHECK(fresh.step_index() == 0);
    for (auto* p : fresh.model().store().all()) CHECK(bit_equal(p->value, before.at(p->name)));

    auto model = load_model(dir / "a.ckpt");
    for (auto* p : model->store().all()) CHECK(bit_equal(p->value, tr.model().store().get(p->name).value));
}

TEST_CASE("metrics stream writes one record per step") {
    const fs::path path = fs::temp_directory_path() / "handrawer_test_metrics.jsonl";
    {
        MetricsLog log(path);
        log.write(1, {0.5, 0.25, 0.525});
        log.write(2, {0.4, 0.2, 0.42});
    }
    std::ifstream f(path);
    std::string line;
    int n = 0;
    while (std::getline(f, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.size() == 5);
        for (const char* k : {"step", "denoise", "rehand", "total", "wallclock"}) CHECK(j.contains(k));
        ++n;
    }
    CHECK(n == 2);
}
