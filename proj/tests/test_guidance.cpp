#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latref/guidance/guidance.hpp"
#include "latref/pipeline/toy_faces.hpp"
#include "test_util.hpp"

using namespace latref;
using namespace latref::guidance;

namespace {

// embedding determined by the first pixel: two fixed orthogonal directions
class TwoBucketEmbedder final : public IdentityEmbedder {
public:
    int dim() const override { return 4; }
    Tensor embed(const ImageTensor& x) const override {
        Tensor e({4});
        if (x[0] < 0.5f)
            e[0] = 1.0f;
        else
            e[1] = 1.0f;
        return e;
    }
    Tensor embed_backward(const ImageTensor& x, const Tensor&) const override {
        return Tensor(x.shape());
    }
};

vq::VqModel tiny_vq(Rng& rng) {
    VqConfig cfg;
    cfg.image_size = 16;
    cfg.f = 4;
    cfg.d = 1;
    cfg.codebook_size = 8;
    cfg.base_width = 8;
    cfg.channel_mult = {1, 1};
    vq::VqModel m;
    m.cfg = cfg;
    m.encoder = vq::Encoder(cfg);
    m.decoder = vq::Decoder(cfg);
    m.encoder.init(rng);
    m.decoder.init(rng);
    m.codebook.entries = Tensor({8, 1});
    rng.fill_normal(m.codebook.entries);
    return m;
}

}  // namespace

TEST_CASE("cosine distance bounds and identity") {
    Tensor a = Tensor::from({3}, {1, 0, 0});
    Tensor b = Tensor::from({3}, {0, 1, 0});
    CHECK(cosine_distance(a, a) == doctest::Approx(0.0));
    CHECK(cosine_distance(a, b) == doctest::Approx(1.0));
    Tensor c = Tensor::from({3}, {-1, 0, 0});
    CHECK(cosine_distance(a, c) == doctest::Approx(2.0));
}

TEST_CASE("irn_loss: zero at identity, cosine term isolated by alpha") {
    TwoBucketEmbedder emb;
    ImageTensor x = Tensor::full({3, 2, 2}, 0.8f);
    CHECK(irn_loss(x, x, 0.7f, emb) == doctest::Approx(0.0));

    // different buckets: orthogonal embeddings, alpha = 0 leaves exactly 1
    ImageTensor lo = Tensor::full({3, 2, 2}, 0.2f);
    CHECK(irn_loss(lo, x, 0.0f, emb) == doctest::Approx(1.0));

    // hand-computed: alpha*L1 + cosine
    ImageTensor a = Tensor::from({3, 1, 1}, {0.2f, 0.4f, 0.6f});
    ImageTensor b = Tensor::from({3, 1, 1}, {0.6f, 0.4f, 0.2f});
    // L1 = (0.4+0+0.4)/3; buckets differ? a[0]=0.2<0.5, b[0]=0.6>=0.5 -> 1.0
    CHECK(irn_loss(a, b, 1.0f, emb) ==
          doctest::Approx(0.8 / 3.0 + 1.0).epsilon(1e-5));
}

TEST_CASE("irn forward: shape preserved, constant input stays finite") {
    Irn irn(16, 2);
    Rng rng(81);
    irn.init(rng);
    ImageTensor x = Tensor::full({3, 16, 16}, 0.5f);
    ImageTensor y = irn_forward(x, irn);
    CHECK(y.shape() == x.shape());
    CHECK(y.all_finite());
    for (int64_t i = 0; i < y.numel(); ++i) {
        CHECK(y[i] >= 0.0f);
        CHECK(y[i] <= 1.0f);
    }
}

TEST_CASE("mask net stays strictly inside (0,1); zero weights give 0.5") {
    MaskNet net(2, 8);
    Rng rng(83);
    net.init(rng);
    Tensor z_hat = testutil::random_tensor({2, 4, 4}, 87, 2.0f);
    Tensor z_d = testutil::random_tensor({2, 4, 4}, 89, 2.0f);
    LatentMask m = mask_forward(z_hat, z_d, net);
    CHECK(m.shape() == z_hat.shape());
    for (int64_t i = 0; i < m.numel(); ++i) {
        CHECK(m[i] > 0.0f);
        CHECK(m[i] < 1.0f);
    }

    MaskNet zeroed(2, 8);  // zero weights and biases
    LatentMask half = mask_forward(z_hat, z_d, zeroed);
    for (int64_t i = 0; i < half.numel(); ++i) CHECK(half[i] == 0.5f);
}

TEST_CASE("guided_score arithmetic and exact neutrality") {
    Tensor score = testutil::random_tensor({2, 3, 3}, 91);
    Tensor grad = testutil::random_tensor({2, 3, 3}, 93);
    Tensor ones = Tensor::full(score.shape(), 1.0f);
    Tensor zeros(score.shape());

    Tensor full = guided_score(score, grad, ones, 1.0f);
    for (int64_t i = 0; i < score.numel(); ++i)
        CHECK(full[i] == doctest::Approx(score[i] - grad[i]));

    CHECK(bit_equal(guided_score(score, grad, ones, 0.0f), score));
    CHECK(bit_equal(guided_score(score, grad, zeros, 1.7f), score));
    CHECK_THROWS_AS(guided_score(score, grad, ones, -1.0f), Error);
}

TEST_CASE("guidance gradient matches finite differences through decode+embed") {
    Rng rng(95);
    vq::VqModel model = tiny_vq(rng);
    FixedRandomEmbedder emb(16, 8);

    Tensor z = testutil::random_tensor({1, 4, 4}, 97);
    ImageTensor anchor({3, 16, 16});
    rng.fill_uniform(anchor, 0.0f, 1.0f);
    Tensor target = emb.embed(anchor);

    Tensor g = guidance_gradient(z, target, model, emb);
    CHECK(g.shape() == z.shape());

    // the straight-through gradient claims dL/dz equals dL/dv at the
    // quantized point v; check that against central differences of the
    // differentiable decode+embed path
    vq::QuantizedLatent q = vq::quantize(z, model.codebook);
    auto loss = [&](const Tensor& v) {
        Tensor img = model.decoder.forward(v.reshaped({1, 1, 4, 4}));
        return cosine_distance(emb.embed(img.reshaped({3, 16, 16})), target);
    };
    Tensor fd = testutil::numeric_grad(loss, q.data, 2e-3f);
    CHECK(testutil::grad_error(g, fd) < 1e-2);
}

TEST_CASE("stepping against the guidance gradient lowers the identity loss") {
    Rng rng(101);
    vq::VqModel model = tiny_vq(rng);
    FixedRandomEmbedder emb(16, 8);

    int improved = 0;
    const int trials = 40;
    for (int trial = 0; trial < trials; ++trial) {
        Tensor z = testutil::random_tensor({1, 4, 4}, 200 + static_cast<uint64_t>(trial));
        ImageTensor anchor({3, 16, 16});
        rng.fill_uniform(anchor, 0.0f, 1.0f);
        Tensor target = emb.embed(anchor);
        Tensor g = guidance_gradient(z, target, model, emb);

        // measure along the differentiable path from the quantized point
        vq::QuantizedLatent q = vq::quantize(z, model.codebook);
        auto loss_at = [&](const Tensor& v) {
            Tensor img = model.decoder.forward(v.reshaped({1, 1, 4, 4}));
            return cosine_distance(emb.embed(img.reshaped({3, 16, 16})), target);
        };
        const double before = loss_at(q.data);
        const double gnorm = l2_norm(g);
        if (gnorm < 1e-12) continue;
        Tensor stepped = q.data;
        const float eta = static_cast<float>(1e-3 / gnorm);
        for (int64_t i = 0; i < stepped.numel(); ++i) stepped[i] -= eta * g[i];
        if (loss_at(stepped) < before) ++improved;
    }
    CHECK(improved >= trials * 95 / 100);
}

TEST_CASE("init_latent: exact at t0=0, seed-dependent, unbiased") {
    Rng rng(103);
    vq::VqModel model = tiny_vq(rng);
    ImageTensor x({3, 16, 16});
    rng.fill_uniform(x, 0.0f, 1.0f);
    Tensor z = model.encode(x);

    Rng r0(1);
    CHECK(bit_equal(init_latent(x, model, 0.0f, r0), z));

    Rng r1(2), r2(3);
    Tensor a = init_latent(x, model, 0.5f, r1);
    Tensor b = init_latent(x, model, 0.5f, r2);
    CHECK(!bit_equal(a, b));

    // mean over many seeds approaches encode(x)
    const int n = 1000;
    Tensor acc(z.shape());
    for (int i = 0; i < n; ++i) {
        Rng r(static_cast<uint64_t>(i) + 10);
        acc += init_latent(x, model, 0.5f, r);
    }
    acc *= 1.0f / n;
    const double se = 0.5 / std::sqrt(static_cast<double>(n));
    for (int64_t i = 0; i < z.numel(); ++i)
        CHECK(std::abs(static_cast<double>(acc[i]) - z[i]) < 3.5 * se);
}

TEST_CASE("identity hook leaves the score untouched when gamma is zero") {
    Rng rng(107);
    vq::VqModel model = tiny_vq(rng);
    FixedRandomEmbedder emb(16, 8);
    Tensor z_d = testutil::random_tensor({1, 4, 4}, 109);
    Tensor target = Tensor::from({8}, {1, 0, 0, 0, 0, 0, 0, 0});

    HookStats stats;
    auto hook = make_identity_hook(model, emb, target, z_d, nullptr, 0.0f, &stats);
    Tensor z = testutil::random_tensor({1, 4, 4}, 113);
    Tensor score = testutil::random_tensor({1, 4, 4}, 127);
    Tensor out = hook(z, 0.8f, score);
    CHECK(bit_equal(out, score));
    CHECK(stats.evaluations == 1);
}
