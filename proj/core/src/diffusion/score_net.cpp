#include "latref/diffusion/score_net.hpp"

#include <cmath>

#include "latref/vq/autoencoder.hpp"

namespace latref::diffusion {

ScoreNetwork::ScoreNetwork(const ScoreNetConfig& cfg) : cfg_(cfg) {
    temb_ = nn::NoiseEmbedding(32, cfg.emb_dim);
    std::vector<int> widths(static_cast<size_t>(cfg.levels));
    for (int i = 0; i < cfg.levels; ++i) widths[static_cast<size_t>(i)] = cfg.width << i;

    conv_in_ = nn::Conv2d(2 * cfg.d, widths[0], 3);
    for (int i = 0; i < cfg.levels; ++i) {
        if (i > 0) downs_.emplace_back(widths[i - 1], widths[i], 3, 2, 1);
        down_blocks_.emplace_back(widths[i], widths[i], cfg.emb_dim);
    }
    mid_ = nn::ResBlock(widths.back(), widths.back(), cfg.emb_dim);
    up_blocks_.resize(static_cast<size_t>(cfg.levels));
    for (int i = cfg.levels - 1; i >= 0; --i) {
        up_blocks_[static_cast<size_t>(i)] =
            nn::ResBlock(2 * widths[static_cast<size_t>(i)], widths[static_cast<size_t>(i)],
                         cfg.emb_dim);
        if (i > 0) ups_.emplace_back(widths[i], widths[i - 1], 3);
    }
    // ups_[j] maps level j+1 -> level j; order them by target level
    std::reverse(ups_.begin(), ups_.end());
    gn_out_ = nn::GroupNorm(widths[0], nn::norm_groups_for(widths[0]));
    conv_out_ = nn::Conv2d(widths[0], cfg.d, 3);
}

void ScoreNetwork::init(Rng& rng) {
    temb_.init(rng);
    conv_in_.init(rng);
    for (auto& c : downs_) c.init(rng);
    for (auto& b : down_blocks_) b.init(rng);
    mid_.init(rng);
    for (auto& b : up_blocks_) b.init(rng);
    for (auto& c : ups_) c.init(rng);
    conv_out_.init(rng);
    // zero the output head so the raw network starts at F = 0
    conv_out_.weight.value.fill(0.0f);
}

namespace {

struct Precond {
    float c_skip, c_out, c_in;
};

Precond precond(float t, float sigma_data) {
    const float s2 = sigma_data * sigma_data;
    const float denom = t * t + s2;
    return {s2 / denom, t * sigma_data / std::sqrt(denom), 1.0f / std::sqrt(denom)};
}

}  // namespace

Tensor ScoreNetwork::run(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t,
                         ScoreNetCtx* ctx) const {
    if (!z_t.same_shape(z_d))
        throw Error("diffusion", "z_t/z_d shape mismatch " + z_t.shape_str());
    const int n = z_t.dim(0);
    if (static_cast<int>(t.size()) != n)
        throw Error("diffusion", "one noise level per batch row required");

    // preconditioned input: scaled z_t concatenated with the normalized condition
    Tensor zin(z_t.shape()), cond(z_d.shape());
    const int64_t per = z_t.numel() / n;
    for (int i = 0; i < n; ++i) {
        const Precond pc = precond(t[static_cast<size_t>(i)], cfg_.sigma_data);
        for (int64_t j = 0; j < per; ++j) {
            zin[i * per + j] = pc.c_in * z_t[i * per + j];
            cond[i * per + j] = z_d[i * per + j] / cfg_.sigma_data;
        }
    }
    Tensor x = concat_channels(zin, cond);

    Tensor emb = ctx ? temb_.forward(t, ctx->emb) : temb_.forward(t);
    const int levels = cfg_.levels;
    if (ctx) {
        ctx->down_blocks.resize(levels);
        ctx->up_blocks.resize(levels);
        ctx->downs.resize(levels - 1);
        ctx->ups.resize(levels - 1);
        ctx->skips.resize(levels);
        ctx->t = t;
        ctx->z_t = z_t;
    }

    Tensor h = ctx ? conv_in_.forward(x, ctx->conv_in) : conv_in_.forward(x);
    std::vector<Tensor> skips(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i) {
        if (i > 0)
            h = ctx ? downs_[static_cast<size_t>(i - 1)].forward(h, ctx->downs[i - 1])
                    : downs_[static_cast<size_t>(i - 1)].forward(h);
        h = ctx ? down_blocks_[static_cast<size_t>(i)].forward(h, &emb, ctx->down_blocks[i])
                : down_blocks_[static_cast<size_t>(i)].forward(h, &emb);
        skips[static_cast<size_t>(i)] = h;
    }
    h = ctx ? mid_.forward(h, &emb, ctx->mid) : mid_.forward(h, &emb);
    for (int i = levels - 1; i >= 0; --i) {
        h = concat_channels(h, skips[static_cast<size_t>(i)]);
        h = ctx ? up_blocks_[static_cast<size_t>(i)].forward(h, &emb, ctx->up_blocks[i])
                : up_blocks_[static_cast<size_t>(i)].forward(h, &emb);
        if (i > 0) {
            h = nn::upsample2x_nearest(h);
            h = ctx ? ups_[static_cast<size_t>(i - 1)].forward(h, ctx->ups[i - 1])
                    : ups_[static_cast<size_t>(i - 1)].forward(h);
        }
    }
    h = ctx ? gn_out_.forward(h, ctx->gn_out) : gn_out_.forward(h);
    h = ctx ? nn::silu(h, ctx->act_out) : nn::silu(h);
    Tensor f = ctx ? conv_out_.forward(h, ctx->conv_out) : conv_out_.forward(h);

    // D = c_skip * z_t + c_out * F
    Tensor out(z_t.shape());
    for (int i = 0; i < n; ++i) {
        const Precond pc = precond(t[static_cast<size_t>(i)], cfg_.sigma_data);
        for (int64_t j = 0; j < per; ++j)
            out[i * per + j] = pc.c_skip * z_t[i * per + j] + pc.c_out * f[i * per + j];
    }
    return out;
}

Tensor ScoreNetwork::denoise(const Tensor& z_t, const Tensor& z_d,
                             const std::vector<float>& t) const {
    return run(z_t, z_d, t, nullptr);
}

Tensor ScoreNetwork::denoise(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t,
                             ScoreNetCtx& ctx) const {
    return run(z_t, z_d, t, &ctx);
}

void ScoreNetwork::backward(ScoreNetCtx& ctx, const Tensor& gD) {
    const int n = gD.dim(0);
    const int64_t per = gD.numel() / n;
    Tensor gF(gD.shape());
    for (int i = 0; i < n; ++i) {
        const Precond pc = precond(ctx.t[static_cast<size_t>(i)], cfg_.sigma_data);
        for (int64_t j = 0; j < per; ++j) gF[i * per + j] = pc.c_out * gD[i * per + j];
    }

    ctx.gemb = Tensor({n, cfg_.emb_dim});
    Tensor g = conv_out_.backward(ctx.conv_out, gF);
    g = nn::silu_backward(ctx.act_out, g);
    g = gn_out_.backward(ctx.gn_out, g);

    const int levels = cfg_.levels;
    std::vector<Tensor> gskips(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i) {
        if (i > 0) {
            g = ups_[static_cast<size_t>(i - 1)].backward(ctx.ups[i - 1], g);
            g = nn::upsample2x_nearest_backward(g);
        }
        Tensor g2 = up_blocks_[static_cast<size_t>(i)].backward(ctx.up_blocks[i], g, &ctx.gemb);
        Tensor gh, gskip;
        split_channels(g2, g2.dim(1) / 2, gh, gskip);
        gskips[static_cast<size_t>(i)] = std::move(gskip);
        g = std::move(gh);
    }
    g = mid_.backward(ctx.mid, g, &ctx.gemb);
    for (int i = levels - 1; i >= 0; --i) {
        g += gskips[static_cast<size_t>(i)];
        g = down_blocks_[static_cast<size_t>(i)].backward(ctx.down_blocks[i], g, &ctx.gemb);
        if (i > 0) g = downs_[static_cast<size_t>(i - 1)].backward(ctx.downs[i - 1], g);
    }
    conv_in_.backward(ctx.conv_in, g);
    temb_.backward(ctx.emb, ctx.gemb);
}

Tensor ScoreNetwork::score(const Tensor& z_t, const Tensor& z_d, float t) const {
    if (t <= 0.0f) throw Error("diffusion", "score requires t > 0");
    std::vector<int> batched = {1};
    for (int d : z_t.shape()) batched.push_back(d);
    Tensor D = denoise(z_t.reshaped(batched), z_d.reshaped(batched), {t});
    Tensor s(z_t.shape());
    const float inv_t2 = 1.0f / (t * t);
    for (int64_t i = 0; i < s.numel(); ++i) s[i] = (D[i] - z_t[i]) * inv_t2;
    return s;
}

void ScoreNetwork::collect(nn::ParamRefs& out) {
    temb_.collect(out);
    conv_in_.collect(out);
    for (auto& c : downs_) c.collect(out);
    for (auto& b : down_blocks_) b.collect(out);
    mid_.collect(out);
    for (auto& b : up_blocks_) b.collect(out);
    for (auto& c : ups_) c.collect(out);
    gn_out_.collect(out);
    conv_out_.collect(out);
}

void ScoreNetwork::save_into(Checkpoint& ck) const {
    nn::ParamRefs ps;
    const_cast<ScoreNetwork*>(this)->collect(ps);
    vq::save_params(ck, "score", ps);
    ck.put("score.sigma_data", Tensor::from({1}, {cfg_.sigma_data}));
}

ScoreNetwork ScoreNetwork::load_from(const Checkpoint& ck, const ScoreNetConfig& cfg) {
    ScoreNetwork net(cfg);
    nn::ParamRefs ps;
    net.collect(ps);
    vq::load_params(ck, "score", ps);
    net.cfg_.sigma_data = ck.get("score.sigma_data")[0];
    return net;
}

}  // namespace latref::diffusion
