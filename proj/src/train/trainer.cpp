#include "handrawer/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"
#include "handrawer/diffusion/schedule.hpp"

namespace handrawer::train {

using ag::Var;

void Optimizer::apply(const std::vector<nn::Parameter*>& params) {
    ++updates_;
    const double lr = config_.lr;
    if (config_.optimizer == OptimizerKind::sgd) {
        for (auto* p : params) {
            if (p->grad.empty()) continue;
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
        }
        return;
    }
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2, eps = config_.adam_eps;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(updates_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(updates_));
    for (auto* p : params) {
        Tensor& m = m_[p->name];
        Tensor& v = v_[p->name];
        if (m.empty()) {
            m = Tensor(p->value.shape());
            v = Tensor(p->value.shape());
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad.empty() ? 0.0 : p->grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

void Optimizer::save(diffusion::Checkpoint& ckpt) const {
    ckpt.header["optimizer_updates"] = updates_;
    for (const auto& [name, t] : m_) ckpt.blobs["adam_m/" + name] = t;
    for (const auto& [name, t] : v_) ckpt.blobs["adam_v/" + name] = t;
}

void Optimizer::load(const diffusion::Checkpoint& ckpt, const std::vector<nn::Parameter*>& params) {
    std::map<std::string, Tensor> m, v;
    for (auto* p : params) {
        auto im = ckpt.blobs.find("adam_m/" + p->name);
        auto iv = ckpt.blobs.find("adam_v/" + p->name);
        if (im == ckpt.blobs.end() || iv == ckpt.blobs.end()) continue;
        if (!im->second.same_shape(p->value) || !iv->second.same_shape(p->value)) {
            throw ValidationError("optimizer state for '" + p->name + "' has the wrong shape");
        }
        m[p->name] = im->second;
        v[p->name] = iv->second;
    }
    m_ = std::move(m);
    v_ = std::move(v);
    updates_ = ckpt.header.value("optimizer_updates", 0ULL);
}

std::vector<std::size_t> batch_indices(std::size_t n, int batch, int step, std::uint64_t seed) {
    if (n == 0) throw ValidationError("training set is empty");
    std::vector<std::size_t> out;
    std::map<std::uint64_t, std::vector<std::size_t>> orders;
    for (int b = 0; b < batch; ++b) {
        const std::uint64_t pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) + b;
        const std::uint64_t epoch = pos / n;
        auto& order = orders[epoch];
        if (order.empty()) {
            order.resize(n);
            std::iota(order.begin(), order.end(), 0);
            CounterRng rng(seed, {0xba7c, epoch});
            for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        }
        out.push_back(order[pos % n]);
    }
    return out;
}

Trainer::Trainer(const TrainConfig& config, std::vector<PreparedSample> data)
    : config_(config), model_(std::make_unique<HandDiffusionModel>(config)), data_(std::move(data)), optimizer_(config) {
    config_.validate();
    if (data_.empty()) throw ValidationError("training set is empty");
}

LossBreakdown Trainer::run_batch(bool accumulate) const {
    const auto& sched = model_->schedule();
    const auto idx = batch_indices(data_.size(), config_.batch, step_, config_.seed);
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    const double lambda = config_.lambda_rehand;
    LossBreakdown sum;
    std::optional<ag::NoGradGuard> no_grad;
    if (!accumulate) no_grad.emplace();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const PreparedSample& s = data_[idx[b]];
        CounterRng rng(config_.seed, {0x7, static_cast<std::uint64_t>(step_), b});
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.T)));
        Tensor eps(s.z0.shape());
        rng.fill_normal(eps.storage());
        const Tensor z_t = diffusion::forward_diffuse(s.z0, t, eps, sched);

        const model::HanDrawerOutput hand = model_->hand_features(s.cond);
        const Var pred = model_->predict_noise(ag::constant(z_t), t, s.cond, config_.fusion ? &hand.fusion : nullptr);
        const Var l_denoise = loss_denoise(ag::constant(eps), pred);
        const Var l_rehand = loss_rehand(ag::constant(s.recon_target), hand.reconstruction);
        const Var total = lambda > 0.0 ? ag::add(l_denoise, ag::scale(l_rehand, lambda)) : l_denoise;
        if (accumulate) ag::backward(total, inv_b);
        sum.denoise += l_denoise.value()[0] * inv_b;
        sum.rehand += l_rehand.value()[0] * inv_b;
    }
    sum.total = total_loss(sum.denoise, sum.rehand, lambda);
    return sum;
}

LossBreakdown Trainer::evaluate_step() const { return run_batch(false); }

LossBreakdown Trainer::step() {
    nn::ParameterStore& store = model_->store();
    store.zero_grad();
    LossBreakdown loss = run_batch(true);
    if (loss_hook) loss_hook(loss);
    if (!std::isfinite(loss.total) || !std::isfinite(loss.denoise) || !std::isfinite(loss.rehand)) {
        store.zero_grad();
        throw Error("non-finite loss at step " + std::to_string(step_) + "; step aborted, state unchanged");
    }
    optimizer_.apply(model_->trainable());
    store.zero_grad();
    ++step_;
    return loss;
}

diffusion::Checkpoint Trainer::checkpoint() const {
    diffusion::Checkpoint ckpt;
    ckpt.header["format"] = "handrawer-train";
    ckpt.header["config"] = config_.to_json();
    ckpt.header["config_hash"] = config_.hash();
    ckpt.header["step"] = step_;
    ckpt.header["optimizer"] = config_.optimizer == OptimizerKind::sgd ? "sgd" : "adam";
    ckpt.header["timesteps"] = model_->schedule().T;
    ckpt.header["beta"] = model_->schedule().beta;
    for (const auto* p : model_->store().all()) ckpt.blobs["param/" + p->name] = p->value;
    optimizer_.save(ckpt);
    return ckpt;
}

void Trainer::save(const std::filesystem::path& path) const { diffusion::save_checkpoint_file(path, checkpoint()); }

namespace {

void load_parameters(nn::ParameterStore& store, const diffusion::Checkpoint& ckpt) {
    std::set<std::string> expected, found;
    for (const auto* p : store.all()) expected.insert(p->name);
    for (const auto& [name, blob] : ckpt.blobs) {
        if (name.rfind("param/", 0) == 0) found.insert(name.substr(6));
    }
    if (expected != found) {
        std::string diff;
        for (const auto& n : expected) {
            if (!found.count(n)) diff += " -" + n;
        }
        for (const auto& n : found) {
            if (!expected.count(n)) diff += " +" + n;
        }
        throw ValidationError("checkpoint parameters do not match the model:" + diff);
    }
    for (auto* p : store.all()) {
        if (!ckpt.blobs.at("param/" + p->name).same_shape(p->value)) {
            throw ValidationError("checkpoint parameter '" + p->name + "' has shape " +
                                  ckpt.blobs.at("param/" + p->name).shape_str() + ", model expects " +
                                  p->value.shape_str());
        }
    }
    for (auto* p : store.all()) p->value = ckpt.blobs.at("param/" + p->name);
}

}  // namespace

void Trainer::load(const diffusion::Checkpoint& ckpt, bool force) {
    if (ckpt.header.value("format", "") != "handrawer-train") throw ValidationError("not a training checkpoint");
    const std::string hash = ckpt.header.value("config_hash", "");
    if (hash != config_.hash() && !force) {
        const TrainConfig other = checkpoint_config(ckpt);
        throw ValidationError("checkpoint config hash " + hash + " (ablation " + std::string(ablation_name(other.ablation)) +
                              ") does not match this run's " + config_.hash() + " (ablation " +
                              std::string(ablation_name(config_.ablation)) + "); pass force to override");
    }
    // Validate everything before touching the model.
    nn::ParameterStore& store = model_->store();
    Optimizer opt(config_);
    opt.load(ckpt, model_->trainable());
    load_parameters(store, ckpt);
    optimizer_ = std::move(opt);
    step_ = ckpt.header.value("step", 0);
}

void Trainer::load(const std::filesystem::path& path, bool force) { load(diffusion::load_checkpoint_file(path), force); }

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw Error("cannot open metrics file " + path.string());
}

void MetricsLog::write(int step, const LossBreakdown& loss) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::ordered_json j;
    j["step"] = step;
    j["denoise"] = loss.denoise;
    j["rehand"] = loss.rehand;
    j["total"] = loss.total;
    j["wallclock"] = wall;
    out_ << j.dump() << '\n';
    out_.flush();
}

TrainConfig checkpoint_config(const diffusion::Checkpoint& ckpt) {
    if (!ckpt.header.contains("config")) throw ValidationError("checkpoint has no config");
    return TrainConfig::from_json(ckpt.header["config"]);
}

std::unique_ptr<HandDiffusionModel> load_model(const std::filesystem::path& path) {
    const diffusion::Checkpoint ckpt = diffusion::load_checkpoint_file(path);
    auto model = std::make_unique<HandDiffusionModel>(checkpoint_config(ckpt));
    load_parameters(model->store(), ckpt);
    return model;
}

}  // namespace handrawer::train
