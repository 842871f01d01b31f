#include "latref/diffusion/sampler.hpp"

#include <cmath>

namespace latref::diffusion {

Tensor perturb(const Tensor& z0, float t, Rng& rng) {
    if (t < 0.0f) throw Error("diffusion", "perturb requires t >= 0");
    Tensor out(z0.shape());
    for (int64_t i = 0; i < z0.numel(); ++i) out[i] = z0[i] + t * rng.normalf();
    return out;
}

Tensor denoised_estimate(const Tensor& z_t, const Tensor& score, float t) {
    if (t == 0.0f) return z_t;
    if (!z_t.same_shape(score)) throw Error("diffusion", "denoised_estimate shape mismatch");
    Tensor out(z_t.shape());
    const float t2 = t * t;
    for (int64_t i = 0; i < z_t.numel(); ++i) out[i] = z_t[i] + t2 * score[i];
    return out;
}

Tensor heun_step(const Tensor& z, float t_i, float t_next, const ScoreFn& score) {
    if (!(t_i > t_next && t_next >= 0.0f))
        throw Error("sampler", "heun_step requires t_i > t_next >= 0");
    const float dt = t_next - t_i;
    // dz/dt = -t * s(z, t)
    Tensor d_i = score(z, t_i);
    d_i *= -t_i;
    Tensor z_pred(z.shape());
    for (int64_t j = 0; j < z.numel(); ++j) z_pred[j] = z[j] + dt * d_i[j];
    if (t_next == 0.0f) return z_pred;  // final step is Euler-only

    Tensor d_next = score(z_pred, t_next);
    d_next *= -t_next;
    Tensor out(z.shape());
    for (int64_t j = 0; j < z.numel(); ++j)
        out[j] = z[j] + dt * 0.5f * (d_i[j] + d_next[j]);
    return out;
}

Tensor sample(const Tensor& z_init, const SigmaSchedule& schedule, const ScoreFn& score,
              const GuidanceHook& hook) {
    schedule.validate();
    const ScoreFn effective =
        hook ? ScoreFn([&](const Tensor& z, float t) { return hook(z, t, score(z, t)); })
             : score;
    Tensor z = z_init;
    for (int i = 0; i < schedule.steps(); ++i) {
        z = heun_step(z, schedule.sigmas[static_cast<size_t>(i)],
                      schedule.sigmas[static_cast<size_t>(i) + 1], effective);
        if (!z.all_finite())
            throw Error("sampler", "non-finite latent after step " + std::to_string(i) +
                                       " (t = " +
                                       std::to_string(schedule.sigmas[static_cast<size_t>(i)]) +
                                       ")");
    }
    return z;
}

ScoreFn conditional_score(const ScoreNetwork& net, const Tensor& z_d) {
    return [&net, z_d](const Tensor& z, float t) { return net.score(z, z_d, t); };
}

DsmBatch make_dsm_batch(const Tensor& z0, const Tensor& z_d, float sigma_min, float sigma_max,
                        Rng& rng) {
    DsmBatch b;
    b.z0 = z0;
    b.z_d = z_d;  // passed through untouched
    const int n = z0.dim(0);
    b.t.resize(static_cast<size_t>(n));
    const double llo = std::log(sigma_min), lhi = std::log(sigma_max);
    for (int i = 0; i < n; ++i)
        b.t[static_cast<size_t>(i)] = static_cast<float>(std::exp(rng.uniform(llo, lhi)));
    b.z_t = Tensor(z0.shape());
    const int64_t per = z0.numel() / n;
    for (int i = 0; i < n; ++i)
        for (int64_t j = 0; j < per; ++j)
            b.z_t[i * per + j] = z0[i * per + j] + b.t[static_cast<size_t>(i)] * rng.normalf();
    return b;
}

double dsm_loss(const BatchScoreFn& score, const DsmBatch& batch) {
    const int n = batch.z0.dim(0);
    const int64_t per = batch.z0.numel() / n;
    Tensor s = score(batch.z_t, batch.z_d, batch.t);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = batch.t[static_cast<size_t>(i)];
        const double lambda = t * t;
        double acc = 0.0;
        for (int64_t j = 0; j < per; ++j) {
            const double target =
                (static_cast<double>(batch.z0[i * per + j]) - batch.z_t[i * per + j]) / (t * t);
            const double diff = s[i * per + j] - target;
            acc += diff * diff;
        }
        const double item = lambda * acc / static_cast<double>(per);
        if (!std::isfinite(item))
            throw Error("training", "non-finite score-matching loss at t = " + std::to_string(t));
        total += item;
    }
    return total / n;
}

double dsm_loss_training(const ScoreNetwork& net, const DsmBatch& batch, ScoreNetCtx& ctx,
                         Tensor& gD, DsmWeighting weighting) {
    const int n = batch.z0.dim(0);
    const int64_t per = batch.z0.numel() / n;
    Tensor D = net.denoise(batch.z_t, batch.z_d, batch.t, ctx);
    // with lambda(t) = t^2 the objective is mean ||(D - z0)/t||^2; the Edm
    // weighting multiplies each item by (t^2 + sigma_data^2)/sigma_data^2
    const double sd2 = static_cast<double>(net.config().sigma_data) * net.config().sigma_data;
    gD = Tensor(D.shape());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = batch.t[static_cast<size_t>(i)];
        const double w = weighting == DsmWeighting::Edm ? (t * t + sd2) / sd2 : 1.0;
        double acc = 0.0;
        for (int64_t j = 0; j < per; ++j) {
            const double diff = (static_cast<double>(D[i * per + j]) - batch.z0[i * per + j]) / t;
            acc += diff * diff;
            gD[i * per + j] = static_cast<float>(2.0 * w * diff / (t * per * n));
        }
        const double item = w * acc / static_cast<double>(per);
        if (!std::isfinite(item))
            throw Error("training", "non-finite score-matching loss at t = " + std::to_string(t));
        total += item;
    }
    return total / n;
}

}  // namespace latref::diffusion
