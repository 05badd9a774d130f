#include "handrawer/train/config.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "handrawer/core/errors.hpp"
#include "handrawer/core/rng.hpp"

namespace handrawer::train {

using nlohmann::json;

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::without_ppzp: return "without_ppzp";
        case Ablation::without_graph: return "without_graph";
        case Ablation::without_3dmesh: return "without_3dmesh";
    }
    return "?";
}

Ablation parse_ablation(std::string_view name) {
    for (Ablation a : kAblations) {
        if (ablation_name(a) == name) return a;
    }
    throw ValidationError("unknown ablation '" + std::string(name) +
                          "' (expected full, without_ppzp, without_graph, without_3dmesh)");
}

ModelConfig::ModelConfig() {
    hand.width = 64;
    hand.heads = 4;
    hand.grid_down = 16;
    hand.depth_size = 64;
    hand.depth_patch = 4;
    hand.recon_size = 64;
}

void TrainConfig::validate() const {
    if (!(steps > 0)) throw ValidationError("steps must be > 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("lr must be > 0");
    if (!(lambda_rehand >= 0.0) || !std::isfinite(lambda_rehand)) throw ValidationError("lambda_rehand must be >= 0");
    if (batch < 1) throw ValidationError("batch must be >= 1");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0)) {
        throw ValidationError("adam betas must lie in [0,1) and eps > 0");
    }
    const ModelConfig& m = model;
    if (m.codec_factor < 1 || m.image_size % m.codec_factor != 0) {
        throw ValidationError("image_size must be divisible by codec_factor");
    }
    if (m.latent_size() % 4 != 0) throw ValidationError("latent size must be divisible by 4");
    if (m.timesteps < 2) throw ValidationError("timesteps must be >= 2");
    if (m.text.width != m.unet.text_width) throw ValidationError("text width must equal the unet text width");
    hand_config().validate();
}

model::HanDrawerConfig TrainConfig::hand_config() const {
    model::HanDrawerConfig h = model.hand;
    if (ablation == Ablation::without_graph) h.mesh_encoder = model::MeshEncoder::flat;
    if (ablation == Ablation::without_3dmesh) h.mesh_encoder = model::MeshEncoder::none;
    return h;
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["steps"] = steps;
    j["lr"] = lr;
    j["batch"] = batch;
    j["lambda_rehand"] = lambda_rehand;
    j["ablation"] = std::string(ablation_name(ablation));
    j["seed"] = seed;
    j["optimizer"] = optimizer == OptimizerKind::sgd ? "sgd" : "adam";
    j["adam"] = {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"eps", adam_eps}};
    j["fusion"] = fusion;
    j["checkpoint_every"] = checkpoint_every;
    const ModelConfig& m = model;
    nlohmann::ordered_json mj;
    mj["image_size"] = m.image_size;
    mj["codec_factor"] = m.codec_factor;
    mj["timesteps"] = m.timesteps;
    mj["train_base"] = m.train_base;
    mj["unet"] = {{"channels", m.unet.channels},
                  {"groups", m.unet.groups},
                  {"time_dim", m.unet.time_dim},
                  {"heads", m.unet.heads},
                  {"inject_before_cross_attention", m.unet.inject_before_cross_attention}};
    mj["text"] = {{"width", m.text.width}, {"max_tokens", m.text.max_tokens}};
    mj["hand"] = {{"width", m.hand.width},           {"heads", m.hand.heads},
                  {"grid", m.hand.grid_down},        {"depth_size", m.hand.depth_size},
                  {"recon_size", m.hand.recon_size}, {"gcn_layers", m.hand.gcn_layers}};
    j["model"] = mj;
    return j;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ValidationError("config section '" + where + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ValidationError("unknown config key '" + where + k + "'");
    }
}

template <class T>
void take(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config key '" + where + key + "' has the wrong type");
    }
}

}  // namespace

void TrainConfig::apply_json(const json& j) {
    check_keys(j, {"steps", "lr", "batch", "lambda_rehand", "ablation", "seed", "optimizer", "adam", "fusion",
                   "checkpoint_every", "model"},
               "");
    take(j, "steps", steps, "");
    take(j, "lr", lr, "");
    take(j, "batch", batch, "");
    take(j, "lambda_rehand", lambda_rehand, "");
    take(j, "seed", seed, "");
    take(j, "fusion", fusion, "");
    take(j, "checkpoint_every", checkpoint_every, "");
    if (j.contains("ablation")) ablation = parse_ablation(j["ablation"].get<std::string>());
    if (j.contains("optimizer")) {
        const std::string o = j["optimizer"].get<std::string>();
        if (o == "sgd") optimizer = OptimizerKind::sgd;
        else if (o == "adam") optimizer = OptimizerKind::adam;
        else throw ValidationError("unknown optimizer '" + o + "' (expected sgd or adam)");
    }
    if (j.contains("adam")) {
        const json& a = j["adam"];
        check_keys(a, {"beta1", "beta2", "eps"}, "adam.");
        take(a, "beta1", adam_beta1, "adam.");
        take(a, "beta2", adam_beta2, "adam.");
        take(a, "eps", adam_eps, "adam.");
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        check_keys(m, {"image_size", "codec_factor", "timesteps", "train_base", "unet", "text", "hand"}, "model.");
        take(m, "image_size", model.image_size, "model.");
        take(m, "codec_factor", model.codec_factor, "model.");
        take(m, "timesteps", model.timesteps, "model.");
        take(m, "train_base", model.train_base, "model.");
        if (m.contains("unet")) {
            const json& u = m["unet"];
            check_keys(u, {"channels", "groups", "time_dim", "heads", "inject_before_cross_attention"}, "model.unet.");
            take(u, "channels", model.unet.channels, "model.unet.");
            take(u, "groups", model.unet.groups, "model.unet.");
            take(u, "time_dim", model.unet.time_dim, "model.unet.");
            take(u, "heads", model.unet.heads, "model.unet.");
            take(u, "inject_before_cross_attention", model.unet.inject_before_cross_attention, "model.unet.");
        }
        if (m.contains("text")) {
            const json& t = m["text"];
            check_keys(t, {"width", "max_tokens"}, "model.text.");
            take(t, "width", model.text.width, "model.text.");
            take(t, "max_tokens", model.text.max_tokens, "model.text.");
            model.unet.text_width = model.text.width;
        }
        if (m.contains("hand")) {
            const json& h = m["hand"];
            check_keys(h, {"width", "heads", "grid", "depth_size", "recon_size", "gcn_layers"}, "model.hand.");
            take(h, "width", model.hand.width, "model.hand.");
            take(h, "heads", model.hand.heads, "model.hand.");
            take(h, "grid", model.hand.grid_down, "model.hand.");
            take(h, "depth_size", model.hand.depth_size, "model.hand.");
            take(h, "recon_size", model.hand.recon_size, "model.hand.");
            take(h, "gcn_layers", model.hand.gcn_layers, "model.hand.");
            if (model.hand.grid_down > 0) model.hand.depth_patch = model.hand.depth_size / model.hand.grid_down;
        }
    }
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.apply_json(j);
    return c;
}

std::string TrainConfig::hash() const {
    auto j = to_json();
    j.erase("steps");
    j.erase("checkpoint_every");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.model.image_size = 64;
    c.model.codec_factor = 4;
    c.model.timesteps = 20;
    c.model.unet.channels = {8, 8, 8};
    c.model.unet.time_dim = 16;
    c.model.unet.text_width = 16;
    c.model.text.width = 16;
    c.model.text.max_tokens = 6;
    c.model.hand.width = 16;
    c.model.hand.heads = 2;
    c.model.hand.grid_down = 4;
    c.model.hand.depth_size = 16;
    c.model.hand.depth_patch = 4;
    c.model.hand.recon_size = 16;
    c.batch = 2;
    return c;
}

}  // namespace handrawer::train
