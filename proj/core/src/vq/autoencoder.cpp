#include "latref/vq/autoencoder.hpp"

#include <cmath>

namespace latref::vq {

namespace {

std::vector<int> level_widths(const VqConfig& cfg) {
    const int levels = static_cast<int>(std::round(std::log2(cfg.f)));
    std::vector<int> w(levels);
    for (int i = 0; i < levels; ++i) {
        const size_t mi = std::min(static_cast<size_t>(i), cfg.channel_mult.size() - 1);
        w[i] = cfg.base_width * cfg.channel_mult[mi];
    }
    return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const VqConfig& cfg) {
    const auto widths = level_widths(cfg);
    levels_ = static_cast<int>(widths.size());
    conv_in_ = nn::Conv2d(3, widths[0], 3);
    int prev = widths[0];
    for (int i = 0; i < levels_; ++i) {
        blocks_.emplace_back(prev, widths[i]);
        downs_.emplace_back(widths[i], widths[i], 3, 2, 1);
        prev = widths[i];
    }
    mid_ = nn::ResBlock(prev, prev);
    gn_out_ = nn::GroupNorm(prev, nn::norm_groups_for(prev));
    conv_out_ = nn::Conv2d(prev, cfg.d, 3);
}

void Encoder::init(Rng& rng) {
    conv_in_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    for (auto& d : downs_) d.init(rng);
    mid_.init(rng);
    conv_out_.init(rng);
}

Tensor Encoder::run(const Tensor& x, EncoderCtx* ctx) const {
    if (ctx) {
        ctx->blocks.resize(levels_);
        ctx->downs.resize(levels_);
    }
    Tensor h = ctx ? conv_in_.forward(x, ctx->conv_in) : conv_in_.forward(x);
    for (int i = 0; i < levels_; ++i) {
        h = ctx ? blocks_[i].forward(h, nullptr, ctx->blocks[i]) : blocks_[i].forward(h);
        h = ctx ? downs_[i].forward(h, ctx->downs[i]) : downs_[i].forward(h);
    }
    h = ctx ? mid_.forward(h, nullptr, ctx->mid) : mid_.forward(h);
    h = ctx ? gn_out_.forward(h, ctx->gn_out) : gn_out_.forward(h);
    h = ctx ? nn::silu(h, ctx->act_out) : nn::silu(h);
    return ctx ? conv_out_.forward(h, ctx->conv_out) : conv_out_.forward(h);
}

Tensor Encoder::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor Encoder::forward(const Tensor& x, EncoderCtx& ctx) const { return run(x, &ctx); }

Tensor Encoder::backward(EncoderCtx& ctx, const Tensor& gy) {
    Tensor g = conv_out_.backward(ctx.conv_out, gy);
    g = nn::silu_backward(ctx.act_out, g);
    g = gn_out_.backward(ctx.gn_out, g);
    g = mid_.backward(ctx.mid, g);
    for (int i = levels_ - 1; i >= 0; --i) {
        g = downs_[i].backward(ctx.downs[i], g);
        g = blocks_[i].backward(ctx.blocks[i], g);
    }
    return conv_in_.backward(ctx.conv_in, g);
}

void Encoder::collect(nn::ParamRefs& out) {
    conv_in_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    for (auto& d : downs_) d.collect(out);
    mid_.collect(out);
    gn_out_.collect(out);
    conv_out_.collect(out);
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const VqConfig& cfg) {
    const auto widths = level_widths(cfg);
    levels_ = static_cast<int>(widths.size());
    const int top = widths[levels_ - 1];
    conv_in_ = nn::Conv2d(cfg.d, top, 3);
    mid_ = nn::ResBlock(top, top);
    int prev = top;
    for (int i = levels_ - 1; i >= 0; --i) {
        ups_.emplace_back(prev, widths[i], 3);
        const int next = i > 0 ? widths[i - 1] : widths[0];
        blocks_.emplace_back(widths[i], next);
        prev = next;
    }
    gn_out_ = nn::GroupNorm(prev, nn::norm_groups_for(prev));
    conv_out_ = nn::Conv2d(prev, 3, 3);
}

void Decoder::init(Rng& rng) {
    conv_in_.init(rng);
    mid_.init(rng);
    for (auto& u : ups_) u.init(rng);
    for (auto& b : blocks_) b.init(rng);
    conv_out_.init(rng);
}

Tensor Decoder::run(const Tensor& z, DecoderCtx* ctx) const {
    if (ctx) {
        ctx->ups.resize(levels_);
        ctx->blocks.resize(levels_);
    }
    Tensor h = ctx ? conv_in_.forward(z, ctx->conv_in) : conv_in_.forward(z);
    h = ctx ? mid_.forward(h, nullptr, ctx->mid) : mid_.forward(h);
    for (int i = 0; i < levels_; ++i) {
        h = nn::upsample2x_nearest(h);
        h = ctx ? ups_[i].forward(h, ctx->ups[i]) : ups_[i].forward(h);
        h = ctx ? blocks_[i].forward(h, nullptr, ctx->blocks[i]) : blocks_[i].forward(h);
    }
    h = ctx ? gn_out_.forward(h, ctx->gn_out) : gn_out_.forward(h);
    h = ctx ? nn::silu(h, ctx->act_out) : nn::silu(h);
    h = ctx ? conv_out_.forward(h, ctx->conv_out) : conv_out_.forward(h);
    return ctx ? nn::sigmoid(h, ctx->act_final) : nn::sigmoid(h);
}

Tensor Decoder::forward(const Tensor& z) const { return run(z, nullptr); }
Tensor Decoder::forward(const Tensor& z, DecoderCtx& ctx) const { return run(z, &ctx); }

Tensor Decoder::backward(DecoderCtx& ctx, const Tensor& gy) {
    Tensor g = nn::sigmoid_backward(ctx.act_final, gy);
    g = conv_out_.backward(ctx.conv_out, g);
    g = nn::silu_backward(ctx.act_out, g);
    g = gn_out_.backward(ctx.gn_out, g);
    for (int i = levels_ - 1; i >= 0; --i) {
        g = blocks_[i].backward(ctx.blocks[i], g);
        g = ups_[i].backward(ctx.ups[i], g);
        g = nn::upsample2x_nearest_backward(g);
    }
    g = mid_.backward(ctx.mid, g);
    return conv_in_.backward(ctx.conv_in, g);
}

Tensor Decoder::backward_input(const DecoderCtx& ctx, const Tensor& gy) const {
    Tensor g = nn::sigmoid_backward(ctx.act_final, gy);
    g = conv_out_.backward_input(ctx.conv_out, g);
    g = nn::silu_backward(ctx.act_out, g);
    g = gn_out_.backward_input(ctx.gn_out, g);
    for (int i = levels_ - 1; i >= 0; --i) {
        g = blocks_[i].backward_input(ctx.blocks[i], g);
        g = ups_[i].backward_input(ctx.ups[i], g);
        g = nn::upsample2x_nearest_backward(g);
    }
    g = mid_.backward_input(ctx.mid, g);
    return conv_in_.backward_input(ctx.conv_in, g);
}

void Decoder::collect(nn::ParamRefs& out) {
    conv_in_.collect(out);
    mid_.collect(out);
    for (auto& u : ups_) u.collect(out);
    for (auto& b : blocks_) b.collect(out);
    gn_out_.collect(out);
    conv_out_.collect(out);
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(int in_ch, int width)
    : c1_(in_ch, width, 4, 2, 1), c2_(width, 2 * width, 4, 2, 1),
      c3_(2 * width, 1, 4, 1, 1), gn_(2 * width, nn::norm_groups_for(2 * width)) {}

void Discriminator::init(Rng& rng) {
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
}

Tensor Discriminator::run(const Tensor& x, DiscriminatorCtx* ctx) const {
    Tensor h = ctx ? c1_.forward(x, ctx->c1) : c1_.forward(x);
    h = ctx ? nn::leaky_relu(h, 0.2f, ctx->a1) : nn::leaky_relu(h, 0.2f);
    h = ctx ? c2_.forward(h, ctx->c2) : c2_.forward(h);
    h = ctx ? gn_.forward(h, ctx->gn) : gn_.forward(h);
    h = ctx ? nn::leaky_relu(h, 0.2f, ctx->a2) : nn::leaky_relu(h, 0.2f);
    return ctx ? c3_.forward(h, ctx->c3) : c3_.forward(h);
}

Tensor Discriminator::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor Discriminator::forward(const Tensor& x, DiscriminatorCtx& ctx) const {
    return run(x, &ctx);
}

Tensor Discriminator::backward(DiscriminatorCtx& ctx, const Tensor& gy) {
    Tensor g = c3_.backward(ctx.c3, gy);
    g = nn::leaky_relu_backward(ctx.a2, 0.2f, g);
    g = gn_.backward(ctx.gn, g);
    g = c2_.backward(ctx.c2, g);
    g = nn::leaky_relu_backward(ctx.a1, 0.2f, g);
    return c1_.backward(ctx.c1, g);
}

Tensor Discriminator::backward_input(const DiscriminatorCtx& ctx, const Tensor& gy) const {
    Tensor g = c3_.backward_input(ctx.c3, gy);
    g = nn::leaky_relu_backward(ctx.a2, 0.2f, g);
    g = gn_.backward_input(ctx.gn, g);
    g = c2_.backward_input(ctx.c2, g);
    g = nn::leaky_relu_backward(ctx.a1, 0.2f, g);
    return c1_.backward_input(ctx.c1, g);
}

void Discriminator::collect(nn::ParamRefs& out) {
    c1_.collect(out);
    c2_.collect(out);
    gn_.collect(out);
    c3_.collect(out);
}

// ---------------------------------------------------------------------------
// PerceptualPyramid

PerceptualPyramid::PerceptualPyramid()
    : c1_(3, 8, 3, 2, 1), c2_(8, 16, 3, 2, 1), c3_(16, 32, 3, 2, 1) {
    Rng rng(0xFEA7u);  // fixed weights, same in every process
    c1_.init(rng);
    c2_.init(rng);
    c3_.init(rng);
}

std::vector<Tensor> PerceptualPyramid::features(const Tensor& x) const {
    Tensor f1 = nn::silu(c1_.forward(x));
    Tensor f2 = nn::silu(c2_.forward(f1));
    Tensor f3 = nn::silu(c3_.forward(f2));
    return {std::move(f1), std::move(f2), std::move(f3)};
}

std::vector<Tensor> PerceptualPyramid::features(const Tensor& x, PerceptualCtx& ctx) const {
    Tensor f1 = nn::silu(c1_.forward(x, ctx.c1), ctx.a1);
    Tensor f2 = nn::silu(c2_.forward(f1, ctx.c2), ctx.a2);
    Tensor f3 = nn::silu(c3_.forward(f2, ctx.c3), ctx.a3);
    return {std::move(f1), std::move(f2), std::move(f3)};
}

Tensor PerceptualPyramid::backward(const PerceptualCtx& ctx,
                                   const std::vector<Tensor>& gfeats) const {
    Tensor g = nn::silu_backward(ctx.a3, gfeats[2]);
    g = c3_.backward_input(ctx.c3, g);
    g += gfeats[1];
    g = nn::silu_backward(ctx.a2, g);
    g = c2_.backward_input(ctx.c2, g);
    g += gfeats[0];
    g = nn::silu_backward(ctx.a1, g);
    return c1_.backward_input(ctx.c1, g);
}

double PerceptualPyramid::l1_distance(const Tensor& a, const Tensor& b) const {
    const auto fa = features(a), fb = features(b);
    double total = 0.0;
    for (size_t i = 0; i < fa.size(); ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < fa[i].numel(); ++j)
            acc += std::abs(static_cast<double>(fa[i][j]) - fb[i][j]);
        total += acc / static_cast<double>(fa[i].numel());
    }
    return total;
}

double PerceptualPyramid::rms_distance(const Tensor& a, const Tensor& b) const {
    const auto fa = features(a), fb = features(b);
    double total = 0.0;
    for (size_t i = 0; i < fa.size(); ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < fa[i].numel(); ++j) {
            const double d = static_cast<double>(fa[i][j]) - fb[i][j];
            acc += d * d;
        }
        total += std::sqrt(acc / static_cast<double>(fa[i].numel()));
    }
    return total / static_cast<double>(fa.size());
}

const PerceptualPyramid& perceptual() {
    static const PerceptualPyramid instance;
    return instance;
}

// ---------------------------------------------------------------------------
// vq_loss

LossBreakdown vq_loss(const Tensor& x, const Tensor& x_rec, const Tensor& z, const Tensor& zq,
                      const Tensor* disc_real, const Tensor* disc_fake,
                      const PerceptualPyramid& phi) {
    if (!x.same_shape(x_rec)) throw Error("vq", "vq_loss image shape mismatch");
    if (!z.same_shape(zq)) throw Error("vq", "vq_loss latent shape mismatch");

    LossBreakdown out;
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i)
        acc += std::abs(static_cast<double>(x[i]) - x_rec[i]);
    out.reconstruction = acc / static_cast<double>(x.numel());
    if (!std::isfinite(out.reconstruction))
        throw Error("training", "non-finite reconstruction loss");

    out.perceptual = phi.l1_distance(x, x_rec);
    if (!std::isfinite(out.perceptual)) throw Error("training", "non-finite perceptual loss");

    if (disc_real && disc_fake) {
        // the adversarial bracket of the objective as written:
        // log D(x) + log(1 - D(x_rec)), with D = sigmoid(logits)
        double adv = 0.0;
        for (int64_t i = 0; i < disc_real->numel(); ++i) {
            const double lr_ = (*disc_real)[i];
            adv += -std::log1p(std::exp(-lr_)) / disc_real->numel();  // log sigmoid
        }
        for (int64_t i = 0; i < disc_fake->numel(); ++i) {
            const double lf = (*disc_fake)[i];
            adv += (-lf - std::log1p(std::exp(-lf))) / disc_fake->numel();  // log(1-sigmoid)
        }
        out.adversarial = adv;
        if (!std::isfinite(out.adversarial))
            throw Error("training", "non-finite adversarial loss");
    }

    // same value, different gradient routing: codebook term moves entries,
    // commitment term moves the encoder
    double q = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double d = static_cast<double>(z[i]) - zq[i];
        q += d * d;
    }
    out.codebook = q / static_cast<double>(z.numel());
    out.commitment = out.codebook;
    if (!std::isfinite(out.codebook)) throw Error("training", "non-finite codebook loss");
    return out;
}

// ---------------------------------------------------------------------------
// VqModel

Tensor VqModel::encode(const ImageTensor& x) const {
    check_shape(x, {3, cfg.image_size, cfg.image_size}, "encode input");
    Tensor batch = x.reshaped({1, 3, cfg.image_size, cfg.image_size});
    Tensor z = encoder.forward(batch);
    return z.reshaped({cfg.d, cfg.latent_size(), cfg.latent_size()});
}

Tensor VqModel::encode_batch(const Tensor& x) const { return encoder.forward(x); }

ImageTensor VqModel::decode(const QuantizedLatent& zq) const {
    const int ls = cfg.latent_size();
    check_shape(zq.data, {cfg.d, ls, ls}, "decode input");
    Tensor img = decoder.forward(zq.data.reshaped({1, cfg.d, ls, ls}));
    return img.reshaped({3, cfg.image_size, cfg.image_size});
}

ImageTensor VqModel::decode(const Tensor& z) const { return decode(quantize(z, codebook)); }

Tensor VqModel::decode_batch_quantized(const Tensor& z) const {
    Tensor snapped;
    std::vector<int32_t> idx;
    quantize_batch(z, codebook, snapped, idx);
    return decoder.forward(snapped);
}

void save_params(Checkpoint& ck, const std::string& prefix, const nn::ParamRefs& params) {
    for (size_t i = 0; i < params.size(); ++i)
        ck.put(prefix + "." + std::to_string(i), params[i]->value);
}

void load_params(const Checkpoint& ck, const std::string& prefix, const nn::ParamRefs& params) {
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor& t = ck.get(prefix + "." + std::to_string(i));
        if (!t.same_shape(params[i]->value))
            throw Error("checkpoint", "shape mismatch for " + prefix + "." + std::to_string(i));
        params[i]->value = t;
    }
}

void VqModel::save_into(Checkpoint& ck) const {
    nn::ParamRefs enc, dec;
    const_cast<Encoder&>(encoder).collect(enc);
    const_cast<Decoder&>(decoder).collect(dec);
    save_params(ck, "enc", enc);
    save_params(ck, "dec", dec);
    ck.put("codebook", codebook.entries);
}

VqModel VqModel::load_from(const Checkpoint& ck, const VqConfig& cfg) {
    VqModel m;
    m.cfg = cfg;
    m.encoder = Encoder(cfg);
    m.decoder = Decoder(cfg);
    nn::ParamRefs enc, dec;
    m.encoder.collect(enc);
    m.decoder.collect(dec);
    load_params(ck, "enc", enc);
    load_params(ck, "dec", dec);
    m.codebook.entries = ck.get("codebook");
    m.codebook.validate();
    return m;
}

}  // namespace latref::vq
