#pragma once

#include "latref/guidance/embedder.hpp"

namespace latref::guidance {

struct IrnCtx {
    nn::Conv2dCtx conv_in, conv_out;
    std::vector<nn::ResBlockCtx> blocks;
    nn::GroupNormCtx gn_out;
    nn::ActCtx act_out, act_final;
};

/// Identity recovery network: compact residual CNN, image to image,
/// sigmoid-bounded output.
class Irn {
public:
    Irn() = default;
    Irn(int width, int blocks);
    void init(Rng& rng);

    Tensor forward(const Tensor& x) const;  // NCHW
    Tensor forward(const Tensor& x, IrnCtx& ctx) const;
    Tensor backward(IrnCtx& ctx, const Tensor& gy);
    void collect(nn::ParamRefs& out);

    void save_into(Checkpoint& ck) const;
    static Irn load_from(const Checkpoint& ck, int width, int blocks);

private:
    Tensor run(const Tensor& x, IrnCtx* ctx) const;
    nn::Conv2d conv_in_, conv_out_;
    std::vector<nn::ResBlock> blocks_;
    nn::GroupNorm gn_out_;
    int width_ = 0, nblocks_ = 0;
};

/// Restores a single degraded image (at working resolution).
ImageTensor irn_forward(const ImageTensor& x_d, const Irn& irn);

/// alpha * L1(x_id, x) + cosine distance between identity embeddings.
double irn_loss(const ImageTensor& x_id, const ImageTensor& x, float alpha,
                const IdentityEmbedder& embedder);

/// Aligned degraded/clean image pools at working resolution.
struct ImagePairs {
    Tensor degraded;  // [M,3,H,W]
    Tensor clean;     // [M,3,H,W]
    int count() const { return degraded.empty() ? 0 : degraded.dim(0); }
};

struct IrnTrainResult {
    Irn irn;
    std::vector<double> loss;
};

/// Trains the IRN with the identity-weighted objective; the embedder is
/// frozen throughout.
IrnTrainResult train_irn(const ImagePairs& pairs, const IrnConfig& cfg,
                         const ConvEmbedder& embedder, uint64_t seed);

}  // namespace latref::guidance
