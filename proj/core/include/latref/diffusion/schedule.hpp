#pragma once

#include <vector>

#include "latref/config.hpp"
#include "latref/tensor.hpp"

namespace latref::diffusion {

/// Strictly decreasing noise levels t_0 > t_1 > ... > t_{N-1} > t_N = 0.
struct SigmaSchedule {
    std::vector<float> sigmas;

    int steps() const { return static_cast<int>(sigmas.size()) - 1; }
    float start() const { return sigmas.front(); }
    void validate() const;
};

/// Karras-style rho-warped discretization between sigma_max and sigma_min,
/// with an appended terminal zero.
SigmaSchedule sigma_schedule(float sigma_min, float sigma_max, int n, float rho);
SigmaSchedule sigma_schedule(const DiffusionConfig& cfg, float sigma_max_resolved);

}  // namespace latref::diffusion
