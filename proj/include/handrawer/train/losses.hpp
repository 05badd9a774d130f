#pragma once
// Denoising and hand-reconstruction objectives.

#include "handrawer/core/autograd.hpp"
#include "handrawer/core/tensor.hpp"

namespace handrawer::train {

struct LossBreakdown {
    double denoise = 0.0;
    double rehand = 0.0;
    double total = 0.0;
};

// Mean squared error over all elements.
double loss_denoise(const Tensor& eps_true, const Tensor& eps_pred);
// Mean absolute error over all elements of two equally sized RGB crops.
double loss_rehand(const Tensor& target_crop, const Tensor& recon_crop);
double total_loss(double denoise, double rehand, double lambda);
LossBreakdown breakdown(double denoise, double rehand, double lambda);

ag::Var loss_denoise(const ag::Var& eps_true, const ag::Var& eps_pred);
ag::Var loss_rehand(const ag::Var& target_crop, const ag::Var& recon_crop);

}  // namespace handrawer::train
