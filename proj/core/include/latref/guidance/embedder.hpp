#pragma once

#include <memory>

#include "latref/checkpoint.hpp"
#include "latref/config.hpp"
#include "latref/nn/blocks.hpp"
#include "latref/pipeline/corpus.hpp"

namespace latref::guidance {

/// Pluggable identity feature extractor. Embeddings are unit-norm and
/// deterministic; implementations must also expose input gradients so the
/// sampler can be steered by identity losses.
class IdentityEmbedder {
public:
    virtual ~IdentityEmbedder() = default;
    virtual int dim() const = 0;
    /// CHW image -> unit-norm vector [dim].
    virtual Tensor embed(const ImageTensor& x) const = 0;
    /// dLoss/dx for a given dLoss/dembedding.
    virtual Tensor embed_backward(const ImageTensor& x, const Tensor& gout) const = 0;
};

struct ConvEmbedderCtx {
    nn::Conv2dCtx c1, c2, c3;
    nn::GroupNormCtx g1, g2, g3;
    nn::ActCtx a1, a2, a3;
    nn::LinearCtx head;
    Tensor pre_pool_shape_holder;
    std::vector<int> pool_in_shape;
    Tensor pre_norm;  // head output before normalization
};

/// Compact convolutional embedder trained on the toy corpus with a
/// cosine-margin identity objective.
class ConvEmbedder final : public IdentityEmbedder {
public:
    ConvEmbedder() = default;
    ConvEmbedder(int image_size, int dim);
    void init(Rng& rng);

    int dim() const override { return dim_; }
    Tensor embed(const ImageTensor& x) const override;
    Tensor embed_backward(const ImageTensor& x, const Tensor& gout) const override;

    Tensor forward_batch(const Tensor& x) const;  // [N,3,H,W] -> unit rows [N,dim]
    Tensor forward_batch(const Tensor& x, ConvEmbedderCtx& ctx) const;
    Tensor backward_batch(ConvEmbedderCtx& ctx, const Tensor& gy);
    Tensor backward_batch_input(const ConvEmbedderCtx& ctx, const Tensor& gy) const;

    void collect(nn::ParamRefs& out);
    void save_into(Checkpoint& ck) const;
    static ConvEmbedder load_from(const Checkpoint& ck, int image_size, int dim);

private:
    Tensor run(const Tensor& x, ConvEmbedderCtx* ctx) const;
    nn::Conv2d c1_, c2_, c3_;
    nn::GroupNorm g1_, g2_, g3_;
    nn::Linear head_;
    int image_size_ = 0, dim_ = 0;
};

/// Fixed seeded embedder; a stand-in plugin useful in tests.
class FixedRandomEmbedder final : public IdentityEmbedder {
public:
    FixedRandomEmbedder(int image_size, int dim);
    int dim() const override { return net_.dim(); }
    Tensor embed(const ImageTensor& x) const override { return net_.embed(x); }
    Tensor embed_backward(const ImageTensor& x, const Tensor& gout) const override {
        return net_.embed_backward(x, gout);
    }

private:
    ConvEmbedder net_;
};

struct EmbedderTrainResult {
    ConvEmbedder embedder;
    std::vector<double> loss;
    double final_train_accuracy = 0.0;
};

/// Cosine-margin softmax over corpus identities.
EmbedderTrainResult train_embedder(const pipeline::Corpus& corpus, const EmbedderConfig& cfg,
                                   int image_size, uint64_t seed);

/// Registry keyed by config name. "toy_conv" loads trained weights from the
/// checkpoint; "fixed_random" needs none.
std::shared_ptr<IdentityEmbedder> make_embedder(const std::string& name,
                                                const EmbedderConfig& cfg, int image_size,
                                                const Checkpoint* trained);

/// Cosine distance 1 - a.b for unit vectors; in [0,2].
double cosine_distance(const Tensor& a, const Tensor& b);

}  // namespace latref::guidance
