#include "latref/nn/blocks.hpp"

#include <cmath>

namespace latref::nn {

int norm_groups_for(int channels) {
    for (int g : {8, 4, 2}) {
        if (channels % g == 0 && channels >= 2 * g) return g;
    }
    return 1;
}

ResBlock::ResBlock(int in_ch, int out_ch, int emb_dim)
    : gn1_(in_ch, norm_groups_for(in_ch)), gn2_(out_ch, norm_groups_for(out_ch)),
      conv1_(in_ch, out_ch, 3), conv2_(out_ch, out_ch, 3), in_ch_(in_ch), out_ch_(out_ch),
      emb_dim_(emb_dim), has_skip_conv_(in_ch != out_ch) {
    if (has_skip_conv_) skip_ = Conv2d(in_ch, out_ch, 1);
    if (emb_dim_ > 0) emb_proj_ = Linear(emb_dim, 2 * out_ch);
}

void ResBlock::init(Rng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (has_skip_conv_) skip_.init(rng);
    if (emb_dim_ > 0) {
        emb_proj_.init(rng);
        // start as identity modulation
        emb_proj_.weight.value *= 0.1f;
    }
    // damp the residual branch so the block starts close to identity
    conv2_.weight.value *= 0.1f;
}

Tensor ResBlock::run(const Tensor& x, const Tensor* emb, ResBlockCtx* ctx) const {
    ResBlockCtx local;
    ResBlockCtx& c = ctx ? *ctx : local;
    const bool train = ctx != nullptr;

    Tensor h = train ? gn1_.forward(x, c.gn1) : gn1_.forward(x);
    h = train ? silu(h, c.a1) : silu(h);
    h = train ? conv1_.forward(h, c.c1) : conv1_.forward(h);

    Tensor g = train ? gn2_.forward(h, c.gn2) : gn2_.forward(h);
    if (emb_dim_ > 0 && emb != nullptr) {
        Tensor e = train ? silu(*emb, c.aemb) : silu(*emb);
        Tensor ss = train ? emb_proj_.forward(e, c.emb) : emb_proj_.forward(e);
        const int n = g.dim(0), ch = g.dim(1), hw = g.dim(2) * g.dim(3);
        if (train) {
            c.gn2_out = g;
            c.scale = Tensor({n, ch});
        }
        for (int img = 0; img < n; ++img)
            for (int cc = 0; cc < ch; ++cc) {
                const float scale = ss.at(img, cc);
                const float shift = ss.at(img, ch + cc);
                if (train) c.scale.at(img, cc) = scale;
                float* p = g.data() + (static_cast<size_t>(img) * ch + cc) * hw;
                for (int i = 0; i < hw; ++i) p[i] = p[i] * (1.0f + scale) + shift;
            }
    }
    g = train ? silu(g, c.a2) : silu(g);
    g = train ? conv2_.forward(g, c.c2) : conv2_.forward(g);

    Tensor sk = has_skip_conv_ ? (train ? skip_.forward(x, c.cskip) : skip_.forward(x)) : x;
    if (train) c.used_skip_conv = has_skip_conv_;
    return g + sk;
}

Tensor ResBlock::forward(const Tensor& x, const Tensor* emb) const { return run(x, emb, nullptr); }
Tensor ResBlock::forward(const Tensor& x, const Tensor* emb, ResBlockCtx& ctx) const {
    return run(x, emb, &ctx);
}

Tensor ResBlock::backward(const ResBlockCtx& ctx, const Tensor& gy, Tensor* gemb) {
    Tensor g = conv2_.backward(ctx.c2, gy);
    g = silu_backward(ctx.a2, g);

    if (emb_dim_ > 0 && gemb != nullptr) {
        // modulated = gn2_out*(1+scale) + shift
        const int n = g.dim(0), ch = g.dim(1), hw = g.dim(2) * g.dim(3);
        Tensor gss({n, 2 * ch});
        Tensor g_gn(g.shape());
        for (int img = 0; img < n; ++img)
            for (int cc = 0; cc < ch; ++cc) {
                const float scale = ctx.scale.at(img, cc);
                const float* gp = g.data() + (static_cast<size_t>(img) * ch + cc) * hw;
                const float* hp = ctx.gn2_out.data() + (static_cast<size_t>(img) * ch + cc) * hw;
                float* dst = g_gn.data() + (static_cast<size_t>(img) * ch + cc) * hw;
                double dscale = 0.0, dshift = 0.0;
                for (int i = 0; i < hw; ++i) {
                    dst[i] = gp[i] * (1.0f + scale);
                    dscale += static_cast<double>(gp[i]) * hp[i];
                    dshift += gp[i];
                }
                gss.at(img, cc) = static_cast<float>(dscale);
                gss.at(img, ch + cc) = static_cast<float>(dshift);
            }
        Tensor ge = emb_proj_.backward(ctx.emb, gss);
        *gemb += silu_backward(ctx.aemb, ge);
        g = std::move(g_gn);
    }

    g = gn2_.backward(ctx.gn2, g);
    g = conv1_.backward(ctx.c1, g);
    g = silu_backward(ctx.a1, g);
    Tensor gx = gn1_.backward(ctx.gn1, g);

    if (ctx.used_skip_conv)
        gx += skip_.backward(ctx.cskip, gy);
    else
        gx += gy;
    return gx;
}

Tensor ResBlock::backward_input(const ResBlockCtx& ctx, const Tensor& gy) const {
    if (emb_dim_ > 0) throw Error("nn", "backward_input unsupported for embedded blocks");
    Tensor g = conv2_.backward_input(ctx.c2, gy);
    g = silu_backward(ctx.a2, g);
    g = gn2_.backward_input(ctx.gn2, g);
    g = conv1_.backward_input(ctx.c1, g);
    g = silu_backward(ctx.a1, g);
    Tensor gx = gn1_.backward_input(ctx.gn1, g);
    if (ctx.used_skip_conv)
        gx += skip_.backward_input(ctx.cskip, gy);
    else
        gx += gy;
    return gx;
}

void ResBlock::collect(ParamRefs& out) {
    gn1_.collect(out);
    conv1_.collect(out);
    gn2_.collect(out);
    conv2_.collect(out);
    if (has_skip_conv_) skip_.collect(out);
    if (emb_dim_ > 0) emb_proj_.collect(out);
}

// ---------------------------------------------------------------------------
// NoiseEmbedding

NoiseEmbedding::NoiseEmbedding(int fourier_dim, int emb_dim)
    : l1_(fourier_dim, emb_dim), l2_(emb_dim, emb_dim), fourier_dim_(fourier_dim),
      emb_dim_(emb_dim) {
    if (fourier_dim % 2 != 0) throw Error("nn", "fourier_dim must be even");
}

void NoiseEmbedding::init(Rng& rng) {
    l1_.init(rng);
    l2_.init(rng);
}

Tensor NoiseEmbedding::fourier(const std::vector<float>& t) const {
    const int n = static_cast<int>(t.size());
    const int half = fourier_dim_ / 2;
    Tensor f({n, fourier_dim_});
    for (int i = 0; i < n; ++i) {
        const double c_noise = 0.25 * std::log(static_cast<double>(std::max(t[i], 1e-8f)));
        for (int j = 0; j < half; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / half);
            f.at(i, j) = static_cast<float>(std::sin(c_noise * freq));
            f.at(i, half + j) = static_cast<float>(std::cos(c_noise * freq));
        }
    }
    return f;
}

Tensor NoiseEmbedding::forward(const std::vector<float>& t) const {
    Tensor f = fourier(t);
    return l2_.forward(silu(l1_.forward(f)));
}

Tensor NoiseEmbedding::forward(const std::vector<float>& t, NoiseEmbeddingCtx& ctx) const {
    ctx.fourier = fourier(t);
    Tensor h = l1_.forward(ctx.fourier, ctx.l1);
    h = silu(h, ctx.a1);
    return l2_.forward(h, ctx.l2);
}

void NoiseEmbedding::backward(const NoiseEmbeddingCtx& ctx, const Tensor& gy) {
    Tensor g = l2_.backward(ctx.l2, gy);
    g = silu_backward(ctx.a1, g);
    l1_.backward(ctx.l1, g);  // t itself is not a differentiable input
}

void NoiseEmbedding::collect(ParamRefs& out) {
    l1_.collect(out);
    l2_.collect(out);
}

}  // namespace latref::nn
