#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "latref/pipeline/toy_faces.hpp"
#include "latref/vq/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace latref;
using namespace latref::vq;

namespace {

Codebook make_codebook(std::vector<float> flat, int K, int d) {
    Codebook cb;
    cb.entries = Tensor::from({K, d}, std::move(flat));
    return cb;
}

VqConfig tiny_cfg() {
    VqConfig cfg;
    cfg.image_size = 32;
    cfg.f = 4;
    cfg.d = 3;
    cfg.codebook_size = 64;
    cfg.base_width = 16;
    cfg.channel_mult = {1, 2};
    cfg.batch = 4;
    return cfg;
}

pipeline::Corpus tiny_corpus(int count, int size) {
    pipeline::ToyFacesSpec spec;
    spec.identities = count;
    spec.variants = 1;
    spec.size = size;
    pipeline::Corpus corpus;
    for (int i = 0; i < count; ++i) {
        corpus.images.push_back(pipeline::toy_face(spec, i, 0));
        corpus.names.push_back("id" + std::to_string(i));
        corpus.labels.push_back(i);
    }
    return corpus;
}

}  // namespace

TEST_CASE("quantize picks the nearest entry, lowest index on ties") {
    Codebook cb = make_codebook({0, 0, 0, 1, 1, 1}, 2, 3);
    Tensor z({3, 1, 1});
    z[0] = z[1] = z[2] = 0.2f;
    QuantizedLatent q = quantize(z, cb);
    CHECK(q.index(0, 0) == 0);
    CHECK(q.data[0] == 0.0f);

    // exact tie at 0.5: both entries at distance 0.75, index 0 wins
    z[0] = z[1] = z[2] = 0.5f;
    CHECK(quantize(z, cb).index(0, 0) == 0);

    // duplicate entries: first one wins
    Codebook dup = make_codebook({1, 1, 1, 1, 1, 1}, 2, 3);
    z[0] = z[1] = z[2] = 0.9f;
    CHECK(quantize(z, dup).index(0, 0) == 0);
}

TEST_CASE("quantize is idempotent and matches brute force") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const int K = rng.uniform_int(2, 64);
        const int d = rng.uniform_int(1, 4);
        const int side = rng.uniform_int(1, 8);
        Codebook cb;
        cb.entries = Tensor({K, d});
        rng.fill_normal(cb.entries);
        Tensor z({d, side, side});
        rng.fill_normal(z);

        QuantizedLatent q = quantize(z, cb);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                REQUIRE(q.index(y, x) == oracles::brute_force_nearest(z, y, x, cb));

        QuantizedLatent q2 = quantize(q.data, cb);
        REQUIRE(q2.indices == q.indices);
        REQUIRE(bit_equal(q2.data, q.data));
    }
}

TEST_CASE("quantize rejects dimension mismatch") {
    Codebook cb = make_codebook({0, 0, 1, 1}, 2, 2);
    Tensor z({3, 2, 2});
    CHECK_THROWS_AS(quantize(z, cb), Error);
}

TEST_CASE("straight-through passes values forward and gradients back") {
    Rng rng(43);
    Codebook cb;
    cb.entries = Tensor({4, 2});
    rng.fill_normal(cb.entries);
    Tensor z({2, 2, 2});
    rng.fill_normal(z);
    QuantizedLatent q = quantize(z, cb);

    Tensor out = straight_through(z, q);
    CHECK(bit_equal(out, q.data));

    // dL/dz == dL/d(out) elementwise, checked against central differences of
    // a quadratic loss taken at the quantized point
    Tensor w = testutil::random_tensor({2, 2, 2}, 47);
    auto loss = [&](const Tensor& v) {
        double acc = 0.0;
        for (int64_t i = 0; i < v.numel(); ++i)
            acc += 0.5 * w[i] * static_cast<double>(v[i]) * v[i];
        return acc;
    };
    Tensor gout(out.shape());
    for (int64_t i = 0; i < out.numel(); ++i) gout[i] = w[i] * out[i];
    Tensor gz = straight_through_backward(gout);
    Tensor fd = testutil::numeric_grad(loss, out);
    CHECK(testutil::grad_error(gz, fd) < 1e-4);

    // quantized == continuous makes the op an identity in both passes
    QuantizedLatent fixed = quantize(q.data, cb);
    CHECK(bit_equal(straight_through(q.data, fixed), q.data));
}

TEST_CASE("vq_loss: zero cases and hand-computed quadratic terms") {
    Tensor x({3, 16, 16});
    Rng rng(53);
    rng.fill_uniform(x, 0.0f, 1.0f);
    Tensor z({3, 2, 2});
    rng.fill_normal(z);
    LossBreakdown lb = vq_loss(x, x, z, z, nullptr, nullptr, perceptual());
    CHECK(lb.reconstruction == 0.0);
    CHECK(lb.perceptual == 0.0);
    CHECK(lb.codebook == 0.0);
    CHECK(lb.commitment == 0.0);

    // known 2x2 latents against a 2-entry codebook
    Tensor z2 = Tensor::from({2, 2, 1}, {0.0f, 1.0f, 0.0f, 1.0f});  // d=2, 2x1 grid
    Codebook cb = make_codebook({0.5f, 0.5f, 2.0f, 2.0f}, 2, 2);
    QuantizedLatent q = quantize(z2, cb);
    // both positions map to entry 0; squared distances: (0-0.5)^2+(0-0.5)^2 per
    // position = 0.5, mean over 4 elements = 0.25
    LossBreakdown lb2 = vq_loss(x, x, z2, q.data, nullptr, nullptr, perceptual());
    CHECK(lb2.codebook == doctest::Approx(0.25));
    CHECK(lb2.commitment == doctest::Approx(0.25));
}

TEST_CASE("codebook and commitment terms route gradients to disjoint owners") {
    VqConfig cfg = tiny_cfg();
    Encoder enc(cfg);
    Rng rng(59);
    enc.init(rng);
    nn::ParamRefs enc_params;
    enc.collect(enc_params);

    Tensor x({1, 3, 32, 32});
    rng.fill_uniform(x, 0.0f, 1.0f);
    EncoderCtx ctx;
    Tensor z = enc.forward(x, ctx);

    Codebook cb;
    cb.entries = Tensor({8, 3});
    rng.fill_normal(cb.entries);
    Tensor zq;
    std::vector<int32_t> idx;
    quantize_batch(z, cb, zq, idx);

    nn::Param cb_param;
    cb_param.init({8, 3}, "cb");
    cb_param.value = cb.entries;

    // commitment-only pass: gradient reaches the encoder, never the codebook
    nn::zero_grads(enc_params);
    Tensor g_z(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i)
        g_z[i] = 2.0f * (z[i] - zq[i]) / static_cast<float>(z.numel());
    enc.backward(ctx, g_z);
    double enc_grad_norm = 0.0;
    for (auto* p : enc_params) enc_grad_norm += dot(p->grad, p->grad);
    CHECK(enc_grad_norm > 0.0);
    CHECK(l2_norm(cb_param.grad) == 0.0);

    // codebook-only pass: entries move, encoder untouched
    nn::zero_grads(enc_params);
    const int plane = z.dim(2) * z.dim(3);
    for (int p = 0; p < plane; ++p) {
        const int32_t k = idx[static_cast<size_t>(p)];
        for (int c = 0; c < 3; ++c)
            cb_param.grad.at(k, c) +=
                2.0f * (cb_param.value.at(k, c) - z[static_cast<int64_t>(c) * plane + p]) /
                static_cast<float>(z.numel());
    }
    CHECK(l2_norm(cb_param.grad) > 0.0);
    for (auto* p : enc_params) CHECK(l2_norm(p->grad) == 0.0);
}

TEST_CASE("encoder/decoder shapes and finiteness") {
    VqConfig cfg = tiny_cfg();
    Rng rng(61);
    VqModel model;
    model.cfg = cfg;
    model.encoder = Encoder(cfg);
    model.decoder = Decoder(cfg);
    model.encoder.init(rng);
    model.decoder.init(rng);
    model.codebook.entries = Tensor({cfg.codebook_size, cfg.d});
    rng.fill_normal(model.codebook.entries);

    Tensor zero_img({3, 32, 32});
    Tensor z = model.encode(zero_img);
    CHECK(z.shape() == std::vector<int>{3, 8, 8});
    CHECK(z.all_finite());

    ImageTensor out = model.decode(z);
    CHECK(out.shape() == std::vector<int>{3, 32, 32});
    for (int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out[i] >= 0.0f);
        CHECK(out[i] <= 1.0f);
    }

    // extreme latents still land in [0,1] with no NaN
    Tensor wild({3, 8, 8});
    for (int64_t i = 0; i < wild.numel(); ++i) wild[i] = (i % 2 ? 1.0f : -1.0f) * 1e20f;
    QuantizedLatent q = quantize(wild, model.codebook);
    ImageTensor out2 = model.decode(q);
    CHECK(out2.all_finite());

    CHECK_THROWS_AS(model.encode(Tensor({3, 16, 16})), Error);
}

TEST_CASE("decode is invariant to sub-cell perturbations of the latent") {
    VqConfig cfg = tiny_cfg();
    Rng rng(67);
    VqModel model;
    model.cfg = cfg;
    model.encoder = Encoder(cfg);
    model.decoder = Decoder(cfg);
    model.encoder.init(rng);
    model.decoder.init(rng);
    model.codebook.entries = Tensor({8, 3});
    rng.fill_normal(model.codebook.entries);

    // minimum gap between distinct codebook entries
    double min_gap = 1e300;
    for (int i = 0; i < 8; ++i)
        for (int j = i + 1; j < 8; ++j) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double diff = model.codebook.entries.at(i, c) -
                                    model.codebook.entries.at(j, c);
                d2 += diff * diff;
            }
            min_gap = std::min(min_gap, std::sqrt(d2));
        }

    Tensor z({3, 8, 8});
    rng.fill_normal(z);
    QuantizedLatent q = quantize(z, model.codebook);
    Tensor nudged = q.data;  // start at cell centers so the margin is known
    Rng prng(71);
    for (int64_t i = 0; i < nudged.numel(); ++i)
        nudged[i] += static_cast<float>(0.2 * min_gap / 2.0 * prng.uniform(-1.0, 1.0));
    CHECK(bit_equal(model.decode(nudged), model.decode(q.data)));
}

TEST_CASE("train_vqvae improves reconstruction and reports dead codes") {
    pipeline::Corpus corpus = tiny_corpus(8, 32);
    VqConfig cfg = tiny_cfg();
    cfg.steps = 220;
    cfg.lr = 2e-3f;
    VqTrainResult res = train_vqvae(corpus, cfg, 11);

    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
        head += res.log.steps[static_cast<size_t>(i)].reconstruction / 20;
        tail += res.log.steps[res.log.steps.size() - 1 - static_cast<size_t>(i)].reconstruction / 20;
    }
    CHECK(tail < head);
    CHECK(res.usage.size() == 64);

    // degenerate codebook geometry still trains and reports usage
    VqConfig small = tiny_cfg();
    small.codebook_size = 8;
    small.d = 2;
    small.steps = 30;
    VqTrainResult res2 = train_vqvae(corpus, small, 13);
    CHECK(res2.dead_code_fraction() >= 0.0);
    CHECK(res2.dead_code_fraction() <= 1.0);

    CHECK_THROWS_AS(train_vqvae(pipeline::Corpus{}, cfg, 1), Error);
}

TEST_CASE("frozen encode/decode is safe to call concurrently") {
    VqConfig cfg = tiny_cfg();
    Rng rng(73);
    VqModel model;
    model.cfg = cfg;
    model.encoder = Encoder(cfg);
    model.decoder = Decoder(cfg);
    model.encoder.init(rng);
    model.decoder.init(rng);
    model.codebook.entries = Tensor({16, 3});
    rng.fill_normal(model.codebook.entries);

    Tensor img({3, 32, 32});
    rng.fill_uniform(img, 0.0f, 1.0f);
    ImageTensor expected = model.decode(model.encode(img));

    std::vector<std::thread> workers;
    std::vector<char> ok(4, 0);
    for (int t = 0; t < 4; ++t)
        workers.emplace_back([&, t] {
            for (int i = 0; i < 3; ++i) {
                ImageTensor out = model.decode(model.encode(img));
                if (!bit_equal(out, expected)) return;
            }
            ok[static_cast<size_t>(t)] = 1;
        });
    for (auto& w : workers) w.join();
    for (char c : ok) CHECK(c == 1);
}
