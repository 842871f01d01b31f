#pragma once

#include <cstdint>
#include <vector>

#include "latref/checkpoint.hpp"
#include "latref/config.hpp"
#include "latref/image.hpp"
#include "latref/nn/blocks.hpp"
#include "latref/vq/codebook.hpp"

namespace latref::vq {

// ---------------------------------------------------------------------------
// Encoder: conv stem, then per level a residual block and a stride-2
// downsampling conv; log2(f) levels. Head maps to the d-channel latent.

struct EncoderCtx {
    nn::Conv2dCtx conv_in, conv_out;
    std::vector<nn::ResBlockCtx> blocks;
    std::vector<nn::Conv2dCtx> downs;
    nn::ResBlockCtx mid;
    nn::GroupNormCtx gn_out;
    nn::ActCtx act_out;
};

class Encoder {
public:
    Encoder() = default;
    explicit Encoder(const VqConfig& cfg);
    void init(Rng& rng);

    Tensor forward(const Tensor& x) const;  // NCHW -> N,d,h,w
    Tensor forward(const Tensor& x, EncoderCtx& ctx) const;
    Tensor backward(EncoderCtx& ctx, const Tensor& gy);
    void collect(nn::ParamRefs& out);

private:
    Tensor run(const Tensor& x, EncoderCtx* ctx) const;
    nn::Conv2d conv_in_, conv_out_;
    std::vector<nn::ResBlock> blocks_;
    std::vector<nn::Conv2d> downs_;
    nn::ResBlock mid_;
    nn::GroupNorm gn_out_;
    int levels_ = 0;
};

// ---------------------------------------------------------------------------
// Decoder: mirror of the encoder with nearest-neighbor upsampling convs.
// Ends in a sigmoid so outputs always land in [0,1].

struct DecoderCtx {
    nn::Conv2dCtx conv_in, conv_out;
    nn::ResBlockCtx mid;
    std::vector<nn::Conv2dCtx> ups;
    std::vector<nn::ResBlockCtx> blocks;
    nn::GroupNormCtx gn_out;
    nn::ActCtx act_out, act_final;
};

class Decoder {
public:
    Decoder() = default;
    explicit Decoder(const VqConfig& cfg);
    void init(Rng& rng);

    Tensor forward(const Tensor& z) const;  // N,d,h,w -> NCHW image
    Tensor forward(const Tensor& z, DecoderCtx& ctx) const;
    Tensor backward(DecoderCtx& ctx, const Tensor& gy);
    /// Frozen path used by guidance: image grads back to latent grads.
    Tensor backward_input(const DecoderCtx& ctx, const Tensor& gy) const;
    void collect(nn::ParamRefs& out);

private:
    Tensor run(const Tensor& z, DecoderCtx* ctx) const;
    nn::Conv2d conv_in_, conv_out_;
    nn::ResBlock mid_;
    std::vector<nn::Conv2d> ups_;
    std::vector<nn::ResBlock> blocks_;
    nn::GroupNorm gn_out_;
    int levels_ = 0;
};

// ---------------------------------------------------------------------------
// Patch discriminator; logits over overlapping patches.

struct DiscriminatorCtx {
    nn::Conv2dCtx c1, c2, c3;
    nn::ActCtx a1, a2;
    nn::GroupNormCtx gn;
};

class Discriminator {
public:
    Discriminator() = default;
    explicit Discriminator(int in_ch, int width);
    void init(Rng& rng);
    Tensor forward(const Tensor& x) const;
    Tensor forward(const Tensor& x, DiscriminatorCtx& ctx) const;
    Tensor backward(DiscriminatorCtx& ctx, const Tensor& gy);
    /// Generator pass: image grads without touching discriminator weights.
    Tensor backward_input(const DiscriminatorCtx& ctx, const Tensor& gy) const;
    void collect(nn::ParamRefs& out);

private:
    Tensor run(const Tensor& x, DiscriminatorCtx* ctx) const;
    nn::Conv2d c1_, c2_, c3_;
    nn::GroupNorm gn_;
};

// ---------------------------------------------------------------------------
// Fixed-weight convolutional feature pyramid standing in for a pretrained
// perceptual extractor. Weights are seeded deterministically, never trained.

struct PerceptualCtx {
    nn::Conv2dCtx c1, c2, c3;
    nn::ActCtx a1, a2, a3;
};

class PerceptualPyramid {
public:
    PerceptualPyramid();

    std::vector<Tensor> features(const Tensor& x) const;  // 3 levels, NCHW
    std::vector<Tensor> features(const Tensor& x, PerceptualCtx& ctx) const;
    /// Backprop per-level feature grads to the input image. Weights are
    /// fixed, so this never accumulates parameter gradients.
    Tensor backward(const PerceptualCtx& ctx, const std::vector<Tensor>& gfeats) const;

    /// Sum over levels of mean absolute feature difference.
    double l1_distance(const Tensor& a, const Tensor& b) const;
    /// Mean over levels of RMS feature difference (the feat_dist metric).
    double rms_distance(const Tensor& a, const Tensor& b) const;

private:
    nn::Conv2d c1_, c2_, c3_;
};

/// Process-wide extractor instance (fixed weights, thread-safe reads).
const PerceptualPyramid& perceptual();

// ---------------------------------------------------------------------------
// Loss breakdown of the training objective: L1 reconstruction, feature-space
// L1, adversarial term as written, codebook and commitment quadratic terms.

struct LossBreakdown {
    double reconstruction = 0.0;
    double perceptual = 0.0;
    double adversarial = 0.0;
    double codebook = 0.0;
    double commitment = 0.0;

    double weighted_sum(const VqConfig& cfg) const {
        return cfg.w_rec * reconstruction + cfg.w_perc * perceptual + cfg.w_adv * adversarial +
               cfg.w_codebook * codebook + cfg.w_commit * commitment;
    }
};

/// Five-term breakdown. disc_real/disc_fake are optional logits maps;
/// without them the adversarial term is 0. Throws naming the first term
/// that comes out non-finite.
LossBreakdown vq_loss(const Tensor& x, const Tensor& x_rec, const Tensor& z, const Tensor& zq,
                      const Tensor* disc_real, const Tensor* disc_fake,
                      const PerceptualPyramid& phi);

// ---------------------------------------------------------------------------
// Bundled model

struct VqModel {
    VqConfig cfg;
    Encoder encoder;
    Decoder decoder;
    Codebook codebook;

    /// CHW image -> d x (size/f) x (size/f) latent.
    Tensor encode(const ImageTensor& x) const;
    Tensor encode_batch(const Tensor& x) const;

    ImageTensor decode(const QuantizedLatent& zq) const;
    /// Continuous latents are quantized first; the quantizer lives in the
    /// decoder path.
    ImageTensor decode(const Tensor& z) const;
    Tensor decode_batch_quantized(const Tensor& z) const;

    void save_into(Checkpoint& ck) const;
    static VqModel load_from(const Checkpoint& ck, const VqConfig& cfg);
};

void save_params(Checkpoint& ck, const std::string& prefix, const nn::ParamRefs& params);
void load_params(const Checkpoint& ck, const std::string& prefix, const nn::ParamRefs& params);

}  // namespace latref::vq
