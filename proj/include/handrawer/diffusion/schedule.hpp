#pragma once

#include <vector>

#include "handrawer/core/tensor.hpp"

namespace handrawer::diffusion {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    // Linear betas from beta_start to beta_end over T steps. With
    // scale_to_steps the endpoints are multiplied by 1000/T so short toy
    // schedules still end near pure noise (capped at a final beta of 0.5).
    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02, bool scale_to_steps = true);
    static NoiseSchedule from_betas(std::vector<double> beta);
    // Test hook: takes alpha_bar verbatim (endpoints 0 and 1 allowed) and
    // skips validation.
    static NoiseSchedule with_alpha_bar_unchecked(std::vector<double> alpha_bar);

    // Throws ValidationError unless betas lie in (0,1) and alpha_bar is the
    // strictly decreasing cumulative product.
    void validate() const;
};

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace handrawer::diffusion
