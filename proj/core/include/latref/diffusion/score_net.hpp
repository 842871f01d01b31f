#pragma once

#include "latref/checkpoint.hpp"
#include "latref/nn/blocks.hpp"

namespace latref::diffusion {

struct ScoreNetConfig {
    int d = 3;            // latent depth
    int width = 32;       // base channels, doubled per level
    int levels = 2;
    int emb_dim = 64;
    float sigma_data = 1.0f;  // preconditioning scale, measured from data
};

struct ScoreNetCtx {
    nn::NoiseEmbeddingCtx emb;
    nn::Conv2dCtx conv_in, conv_out;
    std::vector<nn::ResBlockCtx> down_blocks, up_blocks;
    std::vector<nn::Conv2dCtx> downs, ups;
    nn::ResBlockCtx mid;
    nn::GroupNormCtx gn_out;
    nn::ActCtx act_out;
    std::vector<Tensor> skips;
    // preconditioning cache
    std::vector<float> t;
    Tensor z_t;
    Tensor gemb;
};

/// Conditional denoiser with preconditioned in/out scaling. The condition
/// latent is concatenated channel-wise and never perturbed. The learned
/// score is (denoise(z_t, z_d, t) - z_t) / t^2.
class ScoreNetwork {
public:
    ScoreNetwork() = default;
    explicit ScoreNetwork(const ScoreNetConfig& cfg);
    void init(Rng& rng);

    /// Batched denoised estimate D(z_t, z_d, t); one t per sample.
    Tensor denoise(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t) const;
    Tensor denoise(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t,
                   ScoreNetCtx& ctx) const;
    /// Backprop dLoss/dD into network weights.
    void backward(ScoreNetCtx& ctx, const Tensor& gD);

    /// Single-latent conditional score s(z_t, z_d, t), shape of z_t.
    Tensor score(const Tensor& z_t, const Tensor& z_d, float t) const;

    void collect(nn::ParamRefs& out);
    const ScoreNetConfig& config() const { return cfg_; }
    void set_sigma_data(float s) { cfg_.sigma_data = s; }

    void save_into(Checkpoint& ck) const;
    static ScoreNetwork load_from(const Checkpoint& ck, const ScoreNetConfig& cfg);

private:
    Tensor run(const Tensor& z_t, const Tensor& z_d, const std::vector<float>& t,
               ScoreNetCtx* ctx) const;
    ScoreNetConfig cfg_;
    nn::NoiseEmbedding temb_;
    nn::Conv2d conv_in_, conv_out_;
    std::vector<nn::ResBlock> down_blocks_, up_blocks_;
    std::vector<nn::Conv2d> downs_, ups_;
    nn::ResBlock mid_;
    nn::GroupNorm gn_out_;
};

}  // namespace latref::diffusion
