#pragma once
// The conditioned generator: frozen codec, text encoder and base UNet, plus
// the trainable depth ControlNet branch, hand module and injection sites.

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "handrawer/data/sample.hpp"
#include "handrawer/diffusion/codec.hpp"
#include "handrawer/diffusion/schedule.hpp"
#include "handrawer/diffusion/text.hpp"
#include "handrawer/diffusion/unet.hpp"
#include "handrawer/fusion/ppzp.hpp"
#include "handrawer/model/handrawer.hpp"
#include "handrawer/train/config.hpp"

namespace handrawer::train {

// Step-independent conditioning for one generated image.
struct Conditioning {
    std::string sample_id;
    std::string gesture_label;
    std::string caption;
    Tensor text;          // [L, text_width] for the UNet cross-attention
    Tensor control_hint;  // [1, h, w] whole-image depth at latent resolution
    model::HanDrawerInputs hand;
};

struct PreparedSample {
    Conditioning cond;
    Tensor z0;            // model-space latent of the image
    Tensor recon_target;  // hand RGB crop at the reconstruction resolution
};

class HandDiffusionModel {
public:
    explicit HandDiffusionModel(const TrainConfig& config);
    HandDiffusionModel(const HandDiffusionModel&) = delete;
    HandDiffusionModel& operator=(const HandDiffusionModel&) = delete;

    const TrainConfig& config() const noexcept { return config_; }
    nn::ParameterStore& store() noexcept { return store_; }
    const nn::ParameterStore& store() const noexcept { return store_; }
    const diffusion::NoiseSchedule& schedule() const noexcept { return schedule_; }
    const diffusion::LatentCodec& codec() const noexcept { return codec_; }
    const diffusion::TextEncoder& text_encoder() const noexcept { return text_; }
    const diffusion::UNet& base() const noexcept { return *base_; }
    const diffusion::ControlNet& control() const noexcept { return *control_; }
    const model::HanDrawer& hand() const noexcept { return *hand_; }
    const fusion::FusionSites& sites() const noexcept { return sites_; }

    // Builds the conditioning from a sample's caption, label, depth and hand
    // modalities. Rasters may be at full or model resolution. Modalities the
    // configuration uses must be present.
    Conditioning condition(const data::MultimodalSample& sample) const;
    PreparedSample prepare(const data::MultimodalSample& sample) const;

    // Runs the hand module; counts calls.
    model::HanDrawerOutput hand_features(const Conditioning& cond) const;
    std::uint64_t hand_calls() const noexcept { return hand_calls_.load(); }

    // Predicted noise for z_t at step t. `fusion` may be null to skip the
    // injection sites; the ControlNet branch always runs.
    ag::Var predict_noise(const ag::Var& z_t, int t, const Conditioning& cond,
                          const model::FusionFeatureSet* fusion) const;

    std::vector<nn::Parameter*> trainable();

private:
    TrainConfig config_;
    nn::ParameterStore store_;
    diffusion::NoiseSchedule schedule_;
    diffusion::LatentCodec codec_;
    diffusion::TextEncoder text_;
    std::unique_ptr<diffusion::UNet> base_;
    std::unique_ptr<diffusion::ControlNet> control_;
    std::unique_ptr<model::HanDrawer> hand_;
    fusion::FusionSites sites_;
    mutable std::atomic<std::uint64_t> hand_calls_{0};
};

}  // namespace handrawer::train
