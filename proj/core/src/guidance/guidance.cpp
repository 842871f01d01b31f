#include "latref/guidance/guidance.hpp"

#include <cmath>
#include <cstdio>

#include "latref/diffusion/train.hpp"
#include "latref/nn/adam.hpp"

namespace latref::guidance {

MaskNet::MaskNet(int d, int width)
    : c1_(2 * d, width, 3), c2_(width, width, 3), c3_(width, d, 1), d_(d), width_(width) {}

void MaskNet::init(Rng& rng) {
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
}

Tensor MaskNet::run(const Tensor& x, MaskNetCtx* ctx) const {
    Tensor h = ctx ? c1_.forward(x, ctx->c1) : c1_.forward(x);
    h = ctx ? nn::silu(h, ctx->a1) : nn::silu(h);
    h = ctx ? c2_.forward(h, ctx->c2) : c2_.forward(h);
    h = ctx ? nn::silu(h, ctx->a2) : nn::silu(h);
    h = ctx ? c3_.forward(h, ctx->c3) : c3_.forward(h);
    return ctx ? nn::sigmoid(h, ctx->a3) : nn::sigmoid(h);
}

Tensor MaskNet::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor MaskNet::forward(const Tensor& x, MaskNetCtx& ctx) const { return run(x, &ctx); }

Tensor MaskNet::backward(MaskNetCtx& ctx, const Tensor& gy) {
    Tensor g = nn::sigmoid_backward(ctx.a3, gy);
    g = c3_.backward(ctx.c3, g);
    g = nn::silu_backward(ctx.a2, g);
    g = c2_.backward(ctx.c2, g);
    g = nn::silu_backward(ctx.a1, g);
    return c1_.backward(ctx.c1, g);
}

void MaskNet::collect(nn::ParamRefs& out) {
    c1_.collect(out);
    c2_.collect(out);
    c3_.collect(out);
}

void MaskNet::save_into(Checkpoint& ck) const {
    nn::ParamRefs ps;
    const_cast<MaskNet*>(this)->collect(ps);
    vq::save_params(ck, "mask", ps);
}

MaskNet MaskNet::load_from(const Checkpoint& ck, int d, int width) {
    MaskNet net(d, width);
    nn::ParamRefs ps;
    net.collect(ps);
    vq::load_params(ck, "mask", ps);
    return net;
}

LatentMask mask_forward(const Tensor& z_hat, const Tensor& z_d, const MaskNet& net) {
    if (!z_hat.same_shape(z_d)) throw Error("guidance", "mask_forward latent shape mismatch");
    std::vector<int> batched = {1};
    for (int d : z_hat.shape()) batched.push_back(d);
    Tensor in = concat_channels(z_hat.reshaped(batched), z_d.reshaped(batched));
    return net.forward(in).reshaped(z_hat.shape());
}

Tensor guidance_gradient(const Tensor& z_hat, const Tensor& target_embedding,
                         const vq::VqModel& vq, const IdentityEmbedder& embedder) {
    vq::QuantizedLatent zq = vq::quantize(z_hat, vq.codebook);
    const int ls = vq.cfg.latent_size();
    vq::DecoderCtx dctx;
    Tensor decoded = vq.decoder.forward(zq.data.reshaped({1, vq.cfg.d, ls, ls}), dctx);
    ImageTensor image = decoded.reshaped({3, vq.cfg.image_size, vq.cfg.image_size});

    // d/de of (1 - e . target) is -target
    Tensor gout(target_embedding.shape());
    for (int64_t i = 0; i < gout.numel(); ++i) gout[i] = -target_embedding[i];
    Tensor g_img = embedder.embed_backward(image, gout);

    Tensor g_lat = vq.decoder.backward_input(
        dctx, g_img.reshaped({1, 3, vq.cfg.image_size, vq.cfg.image_size}));
    // straight-through across the quantizer: gradient reaches z_hat unchanged
    return vq::straight_through_backward(g_lat.reshaped(z_hat.shape()));
}

Tensor guided_score(const Tensor& score, const Tensor& grad, const Tensor& mask, float gamma) {
    if (gamma < 0.0f) throw Error("guidance", "guidance scale must be >= 0");
    if (!score.same_shape(grad) || !score.same_shape(mask))
        throw Error("guidance", "guided_score shape mismatch");
    if (gamma == 0.0f) return score;
    Tensor out = score;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const float delta = gamma * mask[i] * grad[i];
        if (delta != 0.0f) out[i] = score[i] - delta;
    }
    return out;
}

Tensor init_latent(const ImageTensor& x_id, const vq::VqModel& vq, float t0, Rng& rng) {
    if (t0 < 0.0f) throw Error("guidance", "init_latent requires t0 >= 0");
    Tensor z = vq.encode(x_id);
    for (int64_t i = 0; i < z.numel(); ++i) z[i] += t0 * rng.normalf();
    return z;
}

diffusion::GuidanceHook make_identity_hook(const vq::VqModel& vq,
                                           const IdentityEmbedder& embedder,
                                           const Tensor& target_embedding, const Tensor& z_d,
                                           const MaskNet* mask_net, float gamma,
                                           HookStats* stats) {
    return [&vq, &embedder, target_embedding, z_d, mask_net, gamma, stats](
               const Tensor& z, float t, Tensor score) -> Tensor {
        if (stats) ++stats->evaluations;
        if (gamma == 0.0f || t <= 0.0f) return score;
        Tensor z_hat = diffusion::denoised_estimate(z, score, t);
        Tensor grad = guidance_gradient(z_hat, target_embedding, vq, embedder);
        if (!grad.all_finite()) {
            std::fprintf(stderr,
                         "[guidance] non-finite gradient at t = %.5f, step left unguided\n",
                         static_cast<double>(t));
            if (stats) ++stats->skipped_non_finite;
            return score;
        }
        Tensor mask = mask_net ? mask_forward(z_hat, z_d, *mask_net)
                               : Tensor::full(grad.shape(), 1.0f);
        return guided_score(score, grad, mask, gamma);
    };
}

MaskTrainResult mask_train(const MaskTrainInputs& inputs, const MaskConfig& cfg, float gamma,
                           const vq::VqModel& vq, const diffusion::ScoreNetwork& score_net,
                           const ConvEmbedder& embedder,
                           const diffusion::SigmaSchedule& schedule, uint64_t seed) {
    const auto& pairs = *inputs.latents;
    if (pairs.count() == 0) throw Error("training", "empty latent pool for mask training");
    const int M = pairs.count();
    const int d = vq.cfg.d, ls = vq.cfg.latent_size(), is = vq.cfg.image_size;

    MaskTrainResult res;
    res.net = MaskNet(d, cfg.width);
    Rng init_rng(mix_seed(seed, 0x71));
    res.net.init(init_rng);

    nn::ParamRefs params;
    res.net.collect(params);
    nn::Adam opt(cfg.lr);
    Rng data_rng(mix_seed(seed, 0x72));

    // identity anchors from the frozen IRN outputs
    Tensor irn_embeddings = embedder.forward_batch(*inputs.irn_images);
    Tensor clean_embeddings = embedder.forward_batch(*inputs.clean_images);

    const int batch = std::min(cfg.batch, M);
    const int64_t lat_per = static_cast<int64_t>(d) * ls * ls;
    (void)is;

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> ids(static_cast<size_t>(batch));
        for (auto& id : ids) id = data_rng.uniform_int(0, M - 1);

        Tensor z0 = diffusion::gather_rows(pairs.z0, ids);
        Tensor z_d = diffusion::gather_rows(pairs.z_d, ids);
        std::vector<float> t(static_cast<size_t>(batch));
        for (auto& tv : t)
            tv = schedule.sigmas[static_cast<size_t>(
                data_rng.uniform_int(0, schedule.steps() - 1))];

        Tensor z_t(z0.shape());
        for (int i = 0; i < batch; ++i)
            for (int64_t j = 0; j < lat_per; ++j)
                z_t[i * lat_per + j] =
                    z0[i * lat_per + j] + t[static_cast<size_t>(i)] * data_rng.normalf();

        // frozen denoiser estimate and identity gradient
        Tensor z_hat = score_net.denoise(z_t, z_d, t);
        Tensor snapped;
        std::vector<int32_t> qidx;
        vq::quantize_batch(z_hat, vq.codebook, snapped, qidx);
        vq::DecoderCtx dctx;
        Tensor decoded = vq.decoder.forward(snapped, dctx);

        ConvEmbedderCtx ectx;
        embedder.forward_batch(decoded, ectx);
        Tensor gemb({batch, embedder.dim()});
        for (int i = 0; i < batch; ++i)
            for (int j = 0; j < embedder.dim(); ++j)
                gemb.at(i, j) = -irn_embeddings.at(ids[static_cast<size_t>(i)], j);
        Tensor g_img = embedder.backward_batch_input(ectx, gemb);
        Tensor grad = vq.decoder.backward_input(dctx, g_img);  // straight-through

        // mask and guided estimate
        MaskNetCtx mctx;
        Tensor mask = res.net.forward(concat_channels(z_hat, z_d), mctx);
        Tensor z_guided(z_hat.shape());
        for (int i = 0; i < batch; ++i) {
            const float t2g = gamma * t[static_cast<size_t>(i)] * t[static_cast<size_t>(i)];
            for (int64_t j = 0; j < lat_per; ++j)
                z_guided[i * lat_per + j] =
                    z_hat[i * lat_per + j] - t2g * mask[i * lat_per + j] * grad[i * lat_per + j];
        }

        // decode the guided estimate and score it against the clean targets
        Tensor snapped2;
        vq::quantize_batch(z_guided, vq.codebook, snapped2, qidx);
        vq::DecoderCtx dctx2;
        Tensor x_hat = vq.decoder.forward(snapped2, dctx2);
        Tensor x_ref = diffusion::gather_rows(*inputs.clean_images, ids);

        double loss = 0.0;
        Tensor g_xhat(x_hat.shape());
        g_xhat.fill(0.0f);

        // feature-distance term (RMS per pyramid level over the batch)
        if (cfg.w_feat > 0.0f) {
            vq::PerceptualCtx pctx;
            const auto f_hat = vq::perceptual().features(x_hat, pctx);
            const auto f_ref = vq::perceptual().features(x_ref);
            std::vector<Tensor> gf(f_hat.size());
            const double levels = static_cast<double>(f_hat.size());
            for (size_t l = 0; l < f_hat.size(); ++l) {
                double acc = 0.0;
                for (int64_t j = 0; j < f_hat[l].numel(); ++j) {
                    const double diff = static_cast<double>(f_hat[l][j]) - f_ref[l][j];
                    acc += diff * diff;
                }
                const double rms =
                    std::sqrt(std::max(acc / static_cast<double>(f_hat[l].numel()), 1e-18));
                loss += cfg.w_feat * rms / levels;
                gf[l] = Tensor(f_hat[l].shape());
                const double scale =
                    cfg.w_feat / (levels * rms * static_cast<double>(f_hat[l].numel()));
                for (int64_t j = 0; j < f_hat[l].numel(); ++j)
                    gf[l][j] = static_cast<float>(scale * (f_hat[l][j] - f_ref[l][j]));
            }
            g_xhat += vq::perceptual().backward(pctx, gf);
        }

        // identity term against the clean image embeddings
        if (cfg.w_id > 0.0f) {
            ConvEmbedderCtx ectx2;
            Tensor e_hat = embedder.forward_batch(x_hat, ectx2);
            Tensor gemb2({batch, embedder.dim()});
            for (int i = 0; i < batch; ++i) {
                double dcos = 1.0;
                for (int j = 0; j < embedder.dim(); ++j) {
                    dcos -= static_cast<double>(e_hat.at(i, j)) *
                            clean_embeddings.at(ids[static_cast<size_t>(i)], j);
                    gemb2.at(i, j) = -cfg.w_id *
                                     clean_embeddings.at(ids[static_cast<size_t>(i)], j) /
                                     static_cast<float>(batch);
                }
                loss += cfg.w_id * dcos / batch;
            }
            g_xhat += embedder.backward_batch_input(ectx2, gemb2);
        }

        // sparsity on the mask
        const double mask_mean = mean(mask);
        loss += cfg.w_sparse * mask_mean;
        if (!std::isfinite(loss))
            throw Error("training", "non-finite mask loss at step " + std::to_string(step));
        res.loss.push_back(loss);
        if (step + 1 == cfg.steps) res.final_mask_mean = mask_mean;

        // backward into the mask only; decoder/embedder/score-net are frozen
        Tensor g_zguided = vq.decoder.backward_input(dctx2, g_xhat);
        Tensor g_mask(mask.shape());
        const float sparse_scale = cfg.w_sparse / static_cast<float>(mask.numel());
        for (int i = 0; i < batch; ++i) {
            const float t2g = gamma * t[static_cast<size_t>(i)] * t[static_cast<size_t>(i)];
            for (int64_t j = 0; j < lat_per; ++j)
                g_mask[i * lat_per + j] =
                    -t2g * grad[i * lat_per + j] * g_zguided[i * lat_per + j] + sparse_scale;
        }
        nn::zero_grads(params);
        res.net.backward(mctx, g_mask);
        opt.set_lr(nn::cosine_lr(cfg.lr, step, cfg.steps));
        opt.step(params);
        if ((step + 1) % 50 == 0 && !nn::params_finite(params))
            throw Error("training", "NaN in weights at step " + std::to_string(step + 1));
    }
    return res;
}

}  // namespace latref::guidance
