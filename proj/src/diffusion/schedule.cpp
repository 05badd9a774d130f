#include "handrawer/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "handrawer/core/errors.hpp"

namespace handrawer::diffusion {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end, bool scale_to_steps) {
    if (T < 1) throw ValidationError("schedule needs at least one step");
    if (scale_to_steps && T < 1000) {
        // Capped so the last beta stays at most 0.5 for very short schedules.
        const double k = std::min(1000.0 / T, 0.5 / beta_end);
        beta_start *= k;
        beta_end *= k;
    }
    std::vector<double> beta(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        beta[static_cast<std::size_t>(t)] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    }
    return from_betas(std::move(beta));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> beta) {
    NoiseSchedule s;
    s.T = static_cast<int>(beta.size());
    s.beta = std::move(beta);
    s.alpha_bar.resize(s.beta.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < s.beta.size(); ++t) {
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    s.validate();
    return s;
}

NoiseSchedule NoiseSchedule::with_alpha_bar_unchecked(std::vector<double> alpha_bar) {
    NoiseSchedule s;
    s.T = static_cast<int>(alpha_bar.size());
    s.alpha_bar = std::move(alpha_bar);
    s.beta.resize(s.alpha_bar.size());
    double prev = 1.0;
    for (std::size_t t = 0; t < s.alpha_bar.size(); ++t) {
        s.beta[t] = prev > 0.0 ? 1.0 - s.alpha_bar[t] / prev : 1.0;
        prev = s.alpha_bar[t];
    }
    return s;
}

void NoiseSchedule::validate() const {
    if (T < 1 || beta.size() != static_cast<std::size_t>(T) || alpha_bar.size() != beta.size()) {
        throw ValidationError("schedule tables do not match T");
    }
    for (int t = 0; t < T; ++t) {
        const double b = beta[static_cast<std::size_t>(t)];
        const double a = alpha_bar[static_cast<std::size_t>(t)];
        if (!(b > 0.0 && b < 1.0)) throw ValidationError("beta[" + std::to_string(t) + "] outside (0,1)");
        if (!(a > 0.0 && a < 1.0)) throw ValidationError("alpha_bar[" + std::to_string(t) + "] outside (0,1)");
        if (t > 0 && !(a < alpha_bar[static_cast<std::size_t>(t - 1)])) {
            throw ValidationError("alpha_bar not strictly decreasing at step " + std::to_string(t));
        }
    }
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) {
        throw ValidationError("step " + std::to_string(t) + " outside [0," + std::to_string(sched.T) + ")");
    }
    if (!z0.same_shape(eps)) throw ValidationError("noise shape " + eps.shape_str() + " != latent " + z0.shape_str());
    const double a = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * z0[i] + sn * eps[i];
    return out;
}

}  // namespace handrawer::diffusion
