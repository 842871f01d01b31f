#pragma once

#include <functional>

#include "latref/diffusion/sampler.hpp"
#include "latref/diffusion/train.hpp"
#include "latref/guidance/embedder.hpp"
#include "latref/guidance/irn.hpp"
#include "latref/vq/autoencoder.hpp"

namespace latref::guidance {

/// Per-element gate over a latent grid, values strictly in (0,1).
using LatentMask = Tensor;

struct MaskNetCtx {
    nn::Conv2dCtx c1, c2, c3;
    nn::ActCtx a1, a2, a3;
};

/// A few convolutions followed by a sigmoid; input is the denoised estimate
/// concatenated with the condition latent.
class MaskNet {
public:
    MaskNet() = default;
    MaskNet(int d, int width);
    void init(Rng& rng);

    Tensor forward(const Tensor& x) const;  // [N,2d,h,w] -> (0,1) mask [N,d,h,w]
    Tensor forward(const Tensor& x, MaskNetCtx& ctx) const;
    Tensor backward(MaskNetCtx& ctx, const Tensor& gy);
    void collect(nn::ParamRefs& out);

    void save_into(Checkpoint& ck) const;
    static MaskNet load_from(const Checkpoint& ck, int d, int width);

private:
    Tensor run(const Tensor& x, MaskNetCtx* ctx) const;
    nn::Conv2d c1_, c2_, c3_;
    int d_ = 0, width_ = 0;
};

/// Mask for one latent (CHW): mask_net(concat(denoised estimate, condition)).
LatentMask mask_forward(const Tensor& z_hat, const Tensor& z_d, const MaskNet& net);

/// Gradient wrt the denoised latent of the identity cosine loss between
/// decode(z_hat) and the target embedding. Quantization is crossed with the
/// straight-through estimator; the decoder stays frozen.
Tensor guidance_gradient(const Tensor& z_hat, const Tensor& target_embedding,
                         const vq::VqModel& vq, const IdentityEmbedder& embedder);

/// score' = score - gamma * (mask (.) grad). Exact-zero contributions leave
/// score bits untouched, so gamma = 0 or an all-zero mask is a no-op.
Tensor guided_score(const Tensor& score, const Tensor& grad, const Tensor& mask, float gamma);

/// encode(x_id) + t0 * eps; the sampler start of the identity-anchored path.
Tensor init_latent(const ImageTensor& x_id, const vq::VqModel& vq, float t0, Rng& rng);

struct HookStats {
    int evaluations = 0;
    int skipped_non_finite = 0;
};

/// Builds the identity guidance hook for sampling. mask_net may be null
/// (full guidance everywhere). Non-finite gradients disable guidance for
/// that evaluation and count in stats.
diffusion::GuidanceHook make_identity_hook(const vq::VqModel& vq,
                                           const IdentityEmbedder& embedder,
                                           const Tensor& target_embedding, const Tensor& z_d,
                                           const MaskNet* mask_net, float gamma,
                                           HookStats* stats = nullptr);

struct MaskTrainResult {
    MaskNet net;
    std::vector<double> loss;
    double final_mask_mean = 0.0;
};

struct MaskTrainInputs {
    const diffusion::LatentPairs* latents = nullptr;  // clean/degraded latent pool
    const Tensor* clean_images = nullptr;             // [M,3,H,W]
    const Tensor* irn_images = nullptr;               // IRN outputs [M,3,H,W]
};

/// Trains only the mask network: guided denoised estimates are decoded and
/// scored with feature distance + identity loss + mask sparsity. All other
/// networks are frozen.
MaskTrainResult mask_train(const MaskTrainInputs& inputs, const MaskConfig& cfg, float gamma,
                           const vq::VqModel& vq, const diffusion::ScoreNetwork& score_net,
                           const ConvEmbedder& embedder,
                           const diffusion::SigmaSchedule& schedule, uint64_t seed);

}  // namespace latref::guidance
