#pragma once

#include "latref/diffusion/sampler.hpp"

namespace latref::diffusion {

/// Aligned pools of clean latents and their degraded-condition latents,
/// pre-encoded with the frozen VQ encoder.
struct LatentPairs {
    Tensor z0;   // [M, d, h, w]
    Tensor z_d;  // [M, d, h, w]

    int count() const { return z0.empty() ? 0 : z0.dim(0); }
};

Tensor gather_rows(const Tensor& pool, const std::vector<int>& ids);

struct DiffusionTrainResult {
    ScoreNetwork net;
    std::vector<double> loss;
    float sigma_data = 1.0f;
    float sigma_max = 0.0f;  // resolved value used for the schedule
};

/// Conditional denoising-score-matching training on latent pairs. The
/// condition pool is read-only; clean latents alone are perturbed.
DiffusionTrainResult train_diffusion(const LatentPairs& pairs, const DiffusionConfig& cfg,
                                     uint64_t seed);

float latent_std(const Tensor& pool);

}  // namespace latref::diffusion
