#pragma once

#include <optional>

#include "latref/nn/layers.hpp"

namespace latref::nn {

int norm_groups_for(int channels);

// ---------------------------------------------------------------------------
// Residual block, pre-activation style:
//   h = conv1(silu(gn1(x)))
//   h = gn2(h) modulated by the time embedding (scale/shift), then silu, conv2
//   out = h + skip(x)
// The embedding path is optional; image-space blocks run without it.

struct ResBlockCtx {
    GroupNormCtx gn1, gn2;
    ActCtx a1, a2, aemb;
    Conv2dCtx c1, c2, cskip;
    LinearCtx emb;
    Tensor gn2_out;      // before modulation
    Tensor scale;        // [N, C]
    bool used_skip_conv = false;
};

class ResBlock {
public:
    ResBlock() = default;
    ResBlock(int in_ch, int out_ch, int emb_dim = 0);

    void init(Rng& rng);
    Tensor forward(const Tensor& x, const Tensor* emb = nullptr) const;
    Tensor forward(const Tensor& x, const Tensor* emb, ResBlockCtx& ctx) const;
    /// Returns grad wrt x; adds grad wrt emb into *gemb when provided.
    Tensor backward(const ResBlockCtx& ctx, const Tensor& gy, Tensor* gemb = nullptr);
    /// Frozen path for embedding-free blocks; parameters untouched.
    Tensor backward_input(const ResBlockCtx& ctx, const Tensor& gy) const;
    void collect(ParamRefs& out);

private:
    Tensor run(const Tensor& x, const Tensor* emb, ResBlockCtx* ctx) const;
    GroupNorm gn1_, gn2_;
    Conv2d conv1_, conv2_;
    Conv2d skip_;
    Linear emb_proj_;  // emb_dim -> 2*out_ch (scale, shift)
    int in_ch_ = 0, out_ch_ = 0, emb_dim_ = 0;
    bool has_skip_conv_ = false;
};

// ---------------------------------------------------------------------------
// Sinusoidal embedding of the noise level, EDM-style c_noise = ln(t)/4,
// expanded with log-spaced frequencies and passed through a 2-layer MLP.

struct NoiseEmbeddingCtx {
    Tensor fourier;
    LinearCtx l1, l2;
    ActCtx a1;
};

class NoiseEmbedding {
public:
    NoiseEmbedding() = default;
    NoiseEmbedding(int fourier_dim, int emb_dim);

    void init(Rng& rng);
    /// t: one noise level per batch row. Returns [N, emb_dim].
    Tensor forward(const std::vector<float>& t) const;
    Tensor forward(const std::vector<float>& t, NoiseEmbeddingCtx& ctx) const;
    void backward(const NoiseEmbeddingCtx& ctx, const Tensor& gy);
    void collect(ParamRefs& out);

    int emb_dim() const { return emb_dim_; }

private:
    Tensor fourier(const std::vector<float>& t) const;
    Linear l1_, l2_;
    int fourier_dim_ = 0, emb_dim_ = 0;
};

}  // namespace latref::nn
