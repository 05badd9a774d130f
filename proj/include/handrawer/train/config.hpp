#pragma once
// Training and model configuration, ablation presets and the config hash
// that guards checkpoint resume.
//
// JSON layout (every key optional; unknown keys are rejected):
//   {"steps", "lr", "batch", "lambda_rehand", "ablation", "seed",
//    "optimizer": "sgd" | "adam", "adam": {"beta1", "beta2", "eps"},
//    "fusion", "checkpoint_every",
//    "model": {"image_size", "codec_factor", "timesteps", "train_base",
//              "unet": {"channels", "groups", "time_dim", "heads",
//                       "inject_before_cross_attention"},
//              "text": {"width", "max_tokens"},
//              "hand": {"width", "heads", "grid", "depth_size",
//                       "recon_size", "gcn_layers"}}}

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "handrawer/diffusion/text.hpp"
#include "handrawer/diffusion/unet.hpp"
#include "handrawer/model/handrawer.hpp"

namespace handrawer::train {

enum class Ablation { full, without_ppzp, without_graph, without_3dmesh };
inline constexpr std::array<Ablation, 4> kAblations = {Ablation::full, Ablation::without_ppzp, Ablation::without_graph,
                                                       Ablation::without_3dmesh};
std::string_view ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);

enum class OptimizerKind { sgd, adam };

struct ModelConfig {
    int image_size = 512;
    int codec_factor = 8;
    int timesteps = 50;
    bool train_base = false;  // diagnostic only; the base UNet is frozen by default
    diffusion::UNetConfig unet;
    diffusion::TextEncoderConfig text;
    model::HanDrawerConfig hand;

    ModelConfig();
    int latent_size() const { return image_size / codec_factor; }
};

struct TrainConfig {
    int steps = 2000;
    double lr = 1e-4;
    int batch = 4;
    double lambda_rehand = 0.1;
    Ablation ablation = Ablation::full;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    bool fusion = true;  // inject HanDrawer features into the UNet
    int checkpoint_every = 0;
    ModelConfig model;

    void validate() const;
    // Model config with the ablation applied to the hand module.
    model::HanDrawerConfig hand_config() const;
    bool preserve_position() const { return ablation != Ablation::without_ppzp; }

    nlohmann::ordered_json to_json() const;
    // Overlays the keys present in j onto this config.
    void apply_json(const nlohmann::json& j);
    static TrainConfig from_json(const nlohmann::json& j);
    // Hex digest over every field except the run length (steps,
    // checkpoint_every), so a resumed run may extend training.
    std::string hash() const;
};

// Small model widths for tests and the toy experiments.
TrainConfig tiny_config();

}  // namespace handrawer::train
