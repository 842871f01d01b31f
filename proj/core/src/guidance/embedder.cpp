#include "latref/guidance/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "latref/nn/adam.hpp"
#include "latref/vq/autoencoder.hpp"

namespace latref::guidance {

ConvEmbedder::ConvEmbedder(int image_size, int dim)
    : c1_(3, 16, 3, 2, 1), c2_(16, 32, 3, 2, 1), c3_(32, 64, 3, 2, 1), g1_(16, 4), g2_(32, 8),
      g3_(64, 8), head_(64, dim), image_size_(image_size), dim_(dim) {}

void ConvEmbedder::init(Rng& rng) {
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
    head_.init(rng);
}

Tensor ConvEmbedder::run(const Tensor& x, ConvEmbedderCtx* ctx) const {
    Tensor h = ctx ? c1_.forward(x, ctx->c1) : c1_.forward(x);
    h = ctx ? g1_.forward(h, ctx->g1) : g1_.forward(h);
    h = ctx ? nn::silu(h, ctx->a1) : nn::silu(h);
    h = ctx ? c2_.forward(h, ctx->c2) : c2_.forward(h);
    h = ctx ? g2_.forward(h, ctx->g2) : g2_.forward(h);
    h = ctx ? nn::silu(h, ctx->a2) : nn::silu(h);
    h = ctx ? c3_.forward(h, ctx->c3) : c3_.forward(h);
    h = ctx ? g3_.forward(h, ctx->g3) : g3_.forward(h);
    h = ctx ? nn::silu(h, ctx->a3) : nn::silu(h);
    if (ctx) ctx->pool_in_shape = h.shape();
    Tensor pooled = nn::global_avg_pool(h);
    Tensor v = ctx ? head_.forward(pooled, ctx->head) : head_.forward(pooled);
    if (ctx) ctx->pre_norm = v;
    return nn::l2_normalize_rows(v);
}

Tensor ConvEmbedder::forward_batch(const Tensor& x) const { return run(x, nullptr); }
Tensor ConvEmbedder::forward_batch(const Tensor& x, ConvEmbedderCtx& ctx) const {
    return run(x, &ctx);
}

namespace {

template <typename HeadBack, typename ConvBack>
Tensor embedder_backward_impl(const ConvEmbedderCtx& ctx, const Tensor& gy, HeadBack head_back,
                              ConvBack conv_back) {
    Tensor g = nn::l2_normalize_rows_backward(ctx.pre_norm, gy);
    g = head_back(g);
    g = nn::global_avg_pool_backward(ctx.pool_in_shape, g);
    return conv_back(g);
}

}  // namespace

Tensor ConvEmbedder::backward_batch(ConvEmbedderCtx& ctx, const Tensor& gy) {
    return embedder_backward_impl(
        ctx, gy, [&](const Tensor& g) { return head_.backward(ctx.head, g); },
        [&](Tensor g) {
            g = nn::silu_backward(ctx.a3, g);
            g = g3_.backward(ctx.g3, g);
            g = c3_.backward(ctx.c3, g);
            g = nn::silu_backward(ctx.a2, g);
            g = g2_.backward(ctx.g2, g);
            g = c2_.backward(ctx.c2, g);
            g = nn::silu_backward(ctx.a1, g);
            g = g1_.backward(ctx.g1, g);
            return c1_.backward(ctx.c1, g);
        });
}

Tensor ConvEmbedder::backward_batch_input(const ConvEmbedderCtx& ctx, const Tensor& gy) const {
    return embedder_backward_impl(
        ctx, gy, [&](const Tensor& g) { return head_.backward_input(g); },
        [&](Tensor g) {
            g = nn::silu_backward(ctx.a3, g);
            g = g3_.backward_input(ctx.g3, g);
            g = c3_.backward_input(ctx.c3, g);
            g = nn::silu_backward(ctx.a2, g);
            g = g2_.backward_input(ctx.g2, g);
            g = c2_.backward_input(ctx.c2, g);
            g = nn::silu_backward(ctx.a1, g);
            g = g1_.backward_input(ctx.g1, g);
            return c1_.backward_input(ctx.c1, g);
        });
}

Tensor ConvEmbedder::embed(const ImageTensor& x) const {
    check_shape(x, {3, image_size_, image_size_}, "embedder input");
    Tensor e = forward_batch(x.reshaped({1, 3, image_size_, image_size_}));
    return e.reshaped({dim_});
}

Tensor ConvEmbedder::embed_backward(const ImageTensor& x, const Tensor& gout) const {
    ConvEmbedderCtx ctx;
    forward_batch(x.reshaped({1, 3, image_size_, image_size_}), ctx);
    Tensor gx = backward_batch_input(ctx, gout.reshaped({1, dim_}));
    return gx.reshaped({3, image_size_, image_size_});
}

void ConvEmbedder::collect(nn::ParamRefs& out) {
    c1_.collect(out);
    g1_.collect(out);
    c2_.collect(out);
    g2_.collect(out);
    c3_.collect(out);
    g3_.collect(out);
    head_.collect(out);
}

void ConvEmbedder::save_into(Checkpoint& ck) const {
    nn::ParamRefs ps;
    const_cast<ConvEmbedder*>(this)->collect(ps);
    vq::save_params(ck, "embedder", ps);
}

ConvEmbedder ConvEmbedder::load_from(const Checkpoint& ck, int image_size, int dim) {
    ConvEmbedder e(image_size, dim);
    nn::ParamRefs ps;
    e.collect(ps);
    vq::load_params(ck, "embedder", ps);
    return e;
}

FixedRandomEmbedder::FixedRandomEmbedder(int image_size, int dim) : net_(image_size, dim) {
    Rng rng(0xE3BEDull);
    net_.init(rng);
}

double cosine_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw Error("guidance", "embedding shape mismatch");
    return 1.0 - dot(a, b);
}

EmbedderTrainResult train_embedder(const pipeline::Corpus& corpus, const EmbedderConfig& cfg,
                                   int image_size, uint64_t seed) {
    if (corpus.size() == 0) throw Error("training", "empty corpus");

    // densify identity labels
    std::map<int, int> remap;
    for (int l : corpus.labels)
        if (!remap.count(l)) remap[l] = static_cast<int>(remap.size());
    const int n_ids = static_cast<int>(remap.size());
    if (n_ids < 2) throw Error("training", "embedder needs at least two identities");
    std::vector<int> labels(corpus.labels.size());
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = remap.at(corpus.labels[i]);

    EmbedderTrainResult res;
    res.embedder = ConvEmbedder(image_size, cfg.dim);
    Rng init_rng(mix_seed(seed, 0x51));
    res.embedder.init(init_rng);

    nn::Param proto;  // identity prototypes, rows normalized at use
    proto.init({n_ids, cfg.dim}, "proto");
    init_rng.fill_normal(proto.value, 0.5f);

    nn::ParamRefs params;
    res.embedder.collect(params);
    params.push_back(&proto);
    nn::Adam opt(cfg.lr);
    Rng data_rng(mix_seed(seed, 0x52));

    const int batch = std::min(cfg.batch, corpus.size());
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor> items(static_cast<size_t>(batch));
        std::vector<int> ys(static_cast<size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            const int id = data_rng.uniform_int(0, corpus.size() - 1);
            items[static_cast<size_t>(i)] = corpus.images[static_cast<size_t>(id)];
            ys[static_cast<size_t>(i)] = labels[static_cast<size_t>(id)];
        }
        Tensor x = stack(items);

        nn::zero_grads(params);
        ConvEmbedderCtx ctx;
        Tensor emb = res.embedder.forward_batch(x, ctx);     // [B, dim], unit rows
        Tensor w_hat = nn::l2_normalize_rows(proto.value);   // [n_ids, dim]

        // cosine-margin softmax: logits = scale * (cos - margin on the target)
        Tensor cos({batch, n_ids});
        nn::gemm(emb.data(), w_hat.data(), cos.data(), batch, cfg.dim, n_ids, false, true, 0.0f);
        double loss = 0.0;
        int correct = 0;
        Tensor gcos({batch, n_ids});
        for (int i = 0; i < batch; ++i) {
            const int y = ys[static_cast<size_t>(i)];
            int argmax = 0;
            double maxlogit = -1e30;
            std::vector<double> logits(static_cast<size_t>(n_ids));
            for (int j = 0; j < n_ids; ++j) {
                logits[static_cast<size_t>(j)] =
                    cfg.scale * (cos.at(i, j) - (j == y ? cfg.margin : 0.0f));
                if (logits[static_cast<size_t>(j)] > maxlogit) {
                    maxlogit = logits[static_cast<size_t>(j)];
                    argmax = j;
                }
            }
            if (argmax == y) ++correct;
            double zsum = 0.0;
            for (double l : logits) zsum += std::exp(l - maxlogit);
            loss += (-(logits[static_cast<size_t>(y)] - maxlogit) + std::log(zsum)) / batch;
            for (int j = 0; j < n_ids; ++j) {
                const double p = std::exp(logits[static_cast<size_t>(j)] - maxlogit) / zsum;
                gcos.at(i, j) =
                    static_cast<float>(cfg.scale * (p - (j == y ? 1.0 : 0.0)) / batch);
            }
        }
        res.loss.push_back(loss);
        if (step + 1 == cfg.steps)
            res.final_train_accuracy = static_cast<double>(correct) / batch;

        // demb = gcos * w_hat ; dproto via normalization backward
        Tensor gemb({batch, cfg.dim});
        nn::gemm(gcos.data(), w_hat.data(), gemb.data(), batch, n_ids, cfg.dim, false, false,
                 0.0f);
        Tensor gw_hat({n_ids, cfg.dim});
        nn::gemm(gcos.data(), emb.data(), gw_hat.data(), n_ids, batch, cfg.dim, true, false,
                 0.0f);
        proto.grad += nn::l2_normalize_rows_backward(proto.value, gw_hat);
        res.embedder.backward_batch(ctx, gemb);

        opt.set_lr(nn::cosine_lr(cfg.lr, step, cfg.steps));
        opt.step(params);
        if ((step + 1) % 50 == 0 && !nn::params_finite(params))
            throw Error("training", "NaN in weights at step " + std::to_string(step + 1));
    }
    return res;
}

std::shared_ptr<IdentityEmbedder> make_embedder(const std::string& name,
                                                const EmbedderConfig& cfg, int image_size,
                                                const Checkpoint* trained) {
    if (name == "toy_conv") {
        if (!trained)
            throw Error("guidance", "embedder 'toy_conv' needs a trained checkpoint (run the "
                                    "irn stage first)");
        return std::make_shared<ConvEmbedder>(
            ConvEmbedder::load_from(*trained, image_size, cfg.dim));
    }
    if (name == "fixed_random")
        return std::make_shared<FixedRandomEmbedder>(image_size, cfg.dim);
    throw Error("guidance", "unknown embedder '" + name + "'");
}

}  // namespace latref::guidance
