#pragma once

#include <functional>

#include "latref/diffusion/schedule.hpp"
#include "latref/diffusion/score_net.hpp"
#include "latref/rng.hpp"

namespace latref::diffusion {

/// Conditional score evaluated at (z, t); the condition is bound inside.
using ScoreFn = std::function<Tensor(const Tensor& z, float t)>;

/// Transforms the score before integration, e.g. identity guidance.
using GuidanceHook = std::function<Tensor(const Tensor& z, float t, Tensor score)>;

/// Forward perturbation z0 + t * eps. Only ever applied to the target
/// latent; conditions stay clean.
Tensor perturb(const Tensor& z0, float t, Rng& rng);

/// Tweedie denoised estimate z_t + t^2 * score; returns z_t at t = 0.
Tensor denoised_estimate(const Tensor& z_t, const Tensor& score, float t);

/// One integration step of dz = -t * s(z, t) dt from t_i to t_next:
/// Euler predictor, trapezoidal corrector while t_next > 0.
Tensor heun_step(const Tensor& z, float t_i, float t_next, const ScoreFn& score);

/// Integrates the full schedule backward from z_init. Deterministic; the
/// hook, when set, rewrites the score at every evaluation.
Tensor sample(const Tensor& z_init, const SigmaSchedule& schedule, const ScoreFn& score,
              const GuidanceHook& hook = nullptr);

/// Binds a network and condition into a ScoreFn.
ScoreFn conditional_score(const ScoreNetwork& net, const Tensor& z_d);

struct DsmBatch {
    Tensor z0;   // clean latents  [N,d,h,w]
    Tensor z_d;  // conditions     [N,d,h,w], never perturbed
    Tensor z_t;  // perturbed targets
    std::vector<float> t;
};

/// Draws per-sample noise levels (log-uniform) and perturbs the targets.
DsmBatch make_dsm_batch(const Tensor& z0, const Tensor& z_d, float sigma_min, float sigma_max,
                        Rng& rng);

using BatchScoreFn =
    std::function<Tensor(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t)>;

/// Denoising score matching objective:
///   mean_i lambda(t_i) * mean_elem || s(z_t, z_d, t_i) - (z0 - z_t)/t_i^2 ||^2
/// with lambda(t) = t^2. Throws naming the offending t when non-finite.
double dsm_loss(const BatchScoreFn& score, const DsmBatch& batch);

/// Loss weighting lambda(t) for training. NoisePred is t^2 (unit-scale
/// noise residual); Edm is t^2 * (t^2 + sigma_data^2) / sigma_data^2, which
/// keeps the gradient scale on the raw network uniform across t.
enum class DsmWeighting { NoisePred, Edm };

/// Training form: evaluates the network with a context and returns the loss
/// plus the gradient wrt the denoised output, ready for backward().
double dsm_loss_training(const ScoreNetwork& net, const DsmBatch& batch, ScoreNetCtx& ctx,
                         Tensor& gD, DsmWeighting weighting = DsmWeighting::Edm);

}  // namespace latref::diffusion
