#include "handrawer/train/model.hpp"

#include <algorithm>

#include "handrawer/core/errors.hpp"
#include "handrawer/data/raster.hpp"

namespace handrawer::train {

using ag::Var;

HandDiffusionModel::HandDiffusionModel(const TrainConfig& config)
    : config_(config),
      store_(config.seed),
      schedule_(diffusion::NoiseSchedule::linear(config.model.timesteps)),
      codec_(config.model.codec_factor),
      text_(config.model.text) {
    config_.validate();
    diffusion::UNetConfig unet = config_.model.unet;
    unet.in_channels = codec_.channels();
    base_ = std::make_unique<diffusion::UNet>(store_, "base", unet);
    control_ = std::make_unique<diffusion::ControlNet>(store_, "control", unet);
    hand_ = std::make_unique<model::HanDrawer>(store_, "hand", config_.hand_config(), text_,
                                               model::MeshGraph::procedural());
    const int L = config_.model.latent_size();
    sites_ = fusion::FusionSites::make(store_, "fusion", config_.hand_config().width, *base_, L, L);
    store_.set_trainable_prefix("base.", config_.model.train_base);
}

namespace {

Tensor to_size(const Tensor& raster, int size) {
    if (raster.dim(1) == size && raster.dim(2) == size) return raster;
    return data::resize_area(raster, size, size);
}

Tensor clamp01(Tensor t) {
    for (double& v : t.storage()) v = std::clamp(v, 0.0, 1.0);
    return t;
}

}  // namespace

Conditioning HandDiffusionModel::condition(const data::MultimodalSample& s) const {
    const model::HanDrawerConfig hc = hand_->config();
    const int L = config_.model.latent_size();
    auto missing = [&](const char* what) {
        return ValidationError("sample '" + s.sample_id + "' lacks " + what + ", required by the " +
                               std::string(ablation_name(config_.ablation)) + " configuration");
    };
    if (s.depth.empty()) throw missing("whole-image depth");
    if (s.hand_depth.empty()) throw missing("hand depth");
    if (hc.mesh_encoder != model::MeshEncoder::none && s.mesh.vertices.empty()) throw missing("a hand mesh");
    s.bbox.validate();

    Conditioning c;
    c.sample_id = s.sample_id;
    c.gesture_label = s.gesture_label;
    c.caption = s.caption;
    c.text = text_.encode_text(s.caption);
    c.control_hint = clamp01(to_size(s.depth, L));
    c.hand.text_tokens = model::label_tokens(s.gesture_label);
    c.hand.hand_depth = clamp01(to_size(s.hand_depth, hc.depth_size));
    if (hc.mesh_encoder != model::MeshEncoder::none) c.hand.vertices = s.mesh.vertices;
    c.hand.bbox = s.bbox;
    return c;
}

PreparedSample HandDiffusionModel::prepare(const data::MultimodalSample& s) const {
    const int size = config_.model.image_size;
    if (s.image.empty() || s.hand_rgb.empty()) throw ValidationError("sample '" + s.sample_id + "' lacks RGB rasters");
    PreparedSample p;
    p.cond = condition(s);
    p.z0 = codec_.encode_image(to_size(s.image, size));
    p.recon_target = to_size(s.hand_rgb, hand_->config().recon_size);
    return p;
}

model::HanDrawerOutput HandDiffusionModel::hand_features(const Conditioning& cond) const {
    hand_calls_.fetch_add(1);
    return hand_->forward(cond.hand);
}

Var HandDiffusionModel::predict_noise(const Var& z_t, int t, const Conditioning& cond,
                                      const model::FusionFeatureSet* fusion) const {
    const Var text = ag::constant(cond.text);
    const diffusion::ControlResiduals control =
        control_->forward(z_t, static_cast<double>(t), text, ag::constant(cond.control_hint));
    diffusion::DenoiseInputs in;
    in.z_t = z_t;
    in.t = static_cast<double>(t);
    in.text = text;
    in.control = &control;
    if (fusion) in.inject = fusion::make_injector(*fusion, sites_, config_.preserve_position());
    return base_->forward(in);
}

std::vector<nn::Parameter*> HandDiffusionModel::trainable() {
    std::vector<nn::Parameter*> out;
    for (auto* p : store_.all()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

}  // namespace handrawer::train
