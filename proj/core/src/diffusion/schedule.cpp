#include "latref/diffusion/schedule.hpp"

#include <cmath>

namespace latref::diffusion {

void SigmaSchedule::validate() const {
    if (sigmas.size() < 2) throw Error("schedule", "needs at least one integration step");
    if (sigmas.back() != 0.0f) throw Error("schedule", "terminal noise level must be 0");
    for (size_t i = 0; i < sigmas.size(); ++i) {
        if (!std::isfinite(sigmas[i]) || sigmas[i] < 0.0f)
            throw Error("schedule", "noise levels must be finite and >= 0");
        if (i > 0 && sigmas[i] >= sigmas[i - 1])
            throw Error("schedule", "noise levels must be strictly decreasing");
    }
}

SigmaSchedule sigma_schedule(float sigma_min, float sigma_max, int n, float rho) {
    if (n < 2) throw Error("schedule", "n must be >= 2");
    if (!(0.0f < sigma_min && sigma_min < sigma_max))
        throw Error("schedule", "requires 0 < sigma_min < sigma_max");
    SigmaSchedule s;
    s.sigmas.resize(static_cast<size_t>(n) + 1);
    const double inv_rho = 1.0 / rho;
    const double lo = std::pow(static_cast<double>(sigma_min), inv_rho);
    const double hi = std::pow(static_cast<double>(sigma_max), inv_rho);
    for (int i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / (n - 1);
        s.sigmas[static_cast<size_t>(i)] =
            static_cast<float>(std::pow(hi + frac * (lo - hi), static_cast<double>(rho)));
    }
    s.sigmas[static_cast<size_t>(n)] = 0.0f;
    s.validate();
    return s;
}

SigmaSchedule sigma_schedule(const DiffusionConfig& cfg, float sigma_max_resolved) {
    return sigma_schedule(cfg.sigma_min, sigma_max_resolved, cfg.sampler_steps, cfg.rho);
}

}  // namespace latref::diffusion
