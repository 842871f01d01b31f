#include "latref/guidance/irn.hpp"

#include <cmath>

#include "latref/nn/adam.hpp"
#include "latref/vq/autoencoder.hpp"

namespace latref::guidance {

Irn::Irn(int width, int blocks)
    : conv_in_(3, width, 3), conv_out_(width, 3, 3),
      gn_out_(width, nn::norm_groups_for(width)), width_(width), nblocks_(blocks) {
    for (int i = 0; i < blocks; ++i) blocks_.emplace_back(width, width);
}

void Irn::init(Rng& rng) {
    conv_in_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    conv_out_.init(rng);
}

Tensor Irn::run(const Tensor& x, IrnCtx* ctx) const {
    if (ctx) ctx->blocks.resize(nblocks_);
    Tensor h = ctx ? conv_in_.forward(x, ctx->conv_in) : conv_in_.forward(x);
    for (int i = 0; i < nblocks_; ++i)
        h = ctx ? blocks_[static_cast<size_t>(i)].forward(h, nullptr, ctx->blocks[i])
                : blocks_[static_cast<size_t>(i)].forward(h);
    h = ctx ? gn_out_.forward(h, ctx->gn_out) : gn_out_.forward(h);
    h = ctx ? nn::silu(h, ctx->act_out) : nn::silu(h);
    h = ctx ? conv_out_.forward(h, ctx->conv_out) : conv_out_.forward(h);
    return ctx ? nn::sigmoid(h, ctx->act_final) : nn::sigmoid(h);
}

Tensor Irn::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor Irn::forward(const Tensor& x, IrnCtx& ctx) const { return run(x, &ctx); }

Tensor Irn::backward(IrnCtx& ctx, const Tensor& gy) {
    Tensor g = nn::sigmoid_backward(ctx.act_final, gy);
    g = conv_out_.backward(ctx.conv_out, g);
    g = nn::silu_backward(ctx.act_out, g);
    g = gn_out_.backward(ctx.gn_out, g);
    for (int i = nblocks_ - 1; i >= 0; --i)
        g = blocks_[static_cast<size_t>(i)].backward(ctx.blocks[i], g);
    return conv_in_.backward(ctx.conv_in, g);
}

void Irn::collect(nn::ParamRefs& out) {
    conv_in_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    gn_out_.collect(out);
    conv_out_.collect(out);
}

void Irn::save_into(Checkpoint& ck) const {
    nn::ParamRefs ps;
    const_cast<Irn*>(this)->collect(ps);
    vq::save_params(ck, "irn", ps);
}

Irn Irn::load_from(const Checkpoint& ck, int width, int blocks) {
    Irn irn(width, blocks);
    nn::ParamRefs ps;
    irn.collect(ps);
    vq::load_params(ck, "irn", ps);
    return irn;
}

ImageTensor irn_forward(const ImageTensor& x_d, const Irn& irn) {
    require_image(x_d, "irn_forward");
    const int h = x_d.dim(1), w = x_d.dim(2);
    Tensor out = irn.forward(x_d.reshaped({1, 3, h, w}));
    return out.reshaped({3, h, w});
}

double irn_loss(const ImageTensor& x_id, const ImageTensor& x, float alpha,
                const IdentityEmbedder& embedder) {
    if (!x_id.same_shape(x)) throw Error("guidance", "irn_loss shape mismatch");
    double l1 = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i)
        l1 += std::abs(static_cast<double>(x_id[i]) - x[i]);
    l1 /= static_cast<double>(x.numel());
    return alpha * l1 + cosine_distance(embedder.embed(x_id), embedder.embed(x));
}

IrnTrainResult train_irn(const ImagePairs& pairs, const IrnConfig& cfg,
                         const ConvEmbedder& embedder, uint64_t seed) {
    if (pairs.count() == 0) throw Error("training", "empty image pair pool");

    IrnTrainResult res;
    res.irn = Irn(cfg.width, cfg.blocks);
    Rng init_rng(mix_seed(seed, 0x61));
    res.irn.init(init_rng);

    nn::ParamRefs params;
    res.irn.collect(params);
    nn::Adam opt(cfg.lr);
    Rng data_rng(mix_seed(seed, 0x62));

    const int batch = std::min(cfg.batch, pairs.count());
    const int64_t per = pairs.clean.numel() / pairs.count();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> ids(static_cast<size_t>(batch));
        for (auto& id : ids) id = data_rng.uniform_int(0, pairs.count() - 1);
        std::vector<int> shape = pairs.degraded.shape();
        shape[0] = batch;
        Tensor xd(shape), x(shape);
        for (int i = 0; i < batch; ++i) {
            std::copy_n(pairs.degraded.data() + static_cast<int64_t>(ids[size_t(i)]) * per, per,
                        xd.data() + static_cast<int64_t>(i) * per);
            std::copy_n(pairs.clean.data() + static_cast<int64_t>(ids[size_t(i)]) * per, per,
                        x.data() + static_cast<int64_t>(i) * per);
        }

        nn::zero_grads(params);
        IrnCtx ctx;
        Tensor x_id = res.irn.forward(xd, ctx);

        // alpha * L1 term
        double l1 = 0.0;
        Tensor g_img(x_id.shape());
        const float s = cfg.alpha / static_cast<float>(per);
        for (int64_t i = 0; i < x_id.numel(); ++i) {
            l1 += std::abs(static_cast<double>(x_id[i]) - x[i]);
            g_img[i] = x_id[i] > x[i] ? s : (x_id[i] < x[i] ? -s : 0.0f);
        }
        l1 = cfg.alpha * l1 / static_cast<double>(x_id.numel());

        // identity term through the frozen embedder
        ConvEmbedderCtx ectx;
        Tensor e_id = embedder.forward_batch(x_id, ectx);
        Tensor e_ref = embedder.forward_batch(x);
        double dcos = 0.0;
        Tensor g_emb(e_id.shape());
        for (int i = 0; i < batch; ++i) {
            double d = 0.0;
            for (int j = 0; j < e_id.dim(1); ++j)
                d += static_cast<double>(e_id.at(i, j)) * e_ref.at(i, j);
            dcos += (1.0 - d) / batch;
            for (int j = 0; j < e_id.dim(1); ++j)
                g_emb.at(i, j) = -e_ref.at(i, j) / static_cast<float>(batch);
        }
        g_img += embedder.backward_batch_input(ectx, g_emb);

        const double loss = l1 + dcos;
        res.loss.push_back(loss);
        if (!std::isfinite(loss))
            throw Error("training", "non-finite IRN loss at step " + std::to_string(step));

        res.irn.backward(ctx, g_img);
        opt.set_lr(nn::cosine_lr(cfg.lr, step, cfg.steps));
        opt.step(params);
        if ((step + 1) % 50 == 0 && !nn::params_finite(params))
            throw Error("training", "NaN in weights at step " + std::to_string(step + 1));
    }
    return res;
}

}  // namespace latref::guidance
