#include "handrawer/train/losses.hpp"

#include <cmath>

#include "handrawer/core/errors.hpp"

namespace handrawer::train {

namespace {

void check_shapes(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ValidationError(std::string(what) + " shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    }
    if (a.size() == 0) throw ValidationError(std::string(what) + " inputs are empty");
}

void check_rgb(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ValidationError("hand crops must be 3 x H x W, got " + t.shape_str());
}

}  // namespace

double loss_denoise(const Tensor& eps_true, const Tensor& eps_pred) {
    check_shapes(eps_true, eps_pred, "denoising loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps_true.size(); ++i) {
        const double d = eps_pred[i] - eps_true[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps_true.size());
}

double loss_rehand(const Tensor& target_crop, const Tensor& recon_crop) {
    check_rgb(target_crop);
    check_shapes(target_crop, recon_crop, "reconstruction loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < target_crop.size(); ++i) acc += std::abs(recon_crop[i] - target_crop[i]);
    return acc / static_cast<double>(target_crop.size());
}

double total_loss(double denoise, double rehand, double lambda) {
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    return denoise + lambda * rehand;
}

LossBreakdown breakdown(double denoise, double rehand, double lambda) {
    return {denoise, rehand, total_loss(denoise, rehand, lambda)};
}

ag::Var loss_denoise(const ag::Var& eps_true, const ag::Var& eps_pred) {
    check_shapes(eps_true.value(), eps_pred.value(), "denoising loss");
    return ag::mse(eps_pred, eps_true);
}

ag::Var loss_rehand(const ag::Var& target_crop, const ag::Var& recon_crop) {
    check_rgb(target_crop.value());
    check_shapes(target_crop.value(), recon_crop.value(), "reconstruction loss");
    return ag::mean_abs_diff(recon_crop, target_crop);
}

}  // namespace handrawer::train
