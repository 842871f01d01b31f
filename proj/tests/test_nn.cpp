#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "latref/nn/adam.hpp"
#include "latref/nn/blocks.hpp"
#include "latref/nn/layers.hpp"
#include "test_util.hpp"

using namespace latref;
using namespace latref::nn;
using testutil::grad_error;
using testutil::numeric_grad;
using testutil::random_tensor;

namespace {

// weighted-sum loss, fixed weights, for gradient checks
struct SumLoss {
    Tensor w;
    explicit SumLoss(const Tensor& like, uint64_t seed) : w(like.shape()) {
        Rng rng(seed);
        rng.fill_normal(w);
    }
    double value(const Tensor& y) const { return dot(w, y); }
};

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(7);
    for (auto [stride, k] : std::vector<std::pair<int, int>>{{1, 3}, {2, 3}, {1, 1}, {2, 4}}) {
        Conv2d conv(3, 4, k, stride, k == 4 ? 1 : k / 2);
        conv.init(rng);
        Tensor x = random_tensor({2, 3, 6, 6}, 11);
        Conv2dCtx ctx;
        Tensor y = conv.forward(x, ctx);
        SumLoss loss(y, 13);

        Tensor gx = conv.backward(ctx, loss.w);
        auto f = [&](const Tensor& xx) { return loss.value(conv.forward(xx)); };
        CHECK(grad_error(gx, numeric_grad(f, x)) < 2e-2);

        auto fw = [&](const Tensor& ww) {
            Conv2d c2 = conv;
            c2.weight.value = ww;
            return loss.value(c2.forward(x));
        };
        CHECK(grad_error(conv.weight.grad, numeric_grad(fw, conv.weight.value)) < 2e-2);

        auto fb = [&](const Tensor& bb) {
            Conv2d c2 = conv;
            c2.bias.value = bb;
            return loss.value(c2.forward(x));
        };
        CHECK(grad_error(conv.bias.grad, numeric_grad(fb, conv.bias.value)) < 2e-2);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(17);
    Linear lin(5, 3);
    lin.init(rng);
    Tensor x = random_tensor({4, 5}, 19);
    LinearCtx ctx;
    Tensor y = lin.forward(x, ctx);
    SumLoss loss(y, 23);
    Tensor gx = lin.backward(ctx, loss.w);

    auto f = [&](const Tensor& xx) { return loss.value(lin.forward(xx)); };
    CHECK(grad_error(gx, numeric_grad(f, x)) < 1e-2);
    auto fw = [&](const Tensor& ww) {
        Linear l2 = lin;
        l2.weight.value = ww;
        return loss.value(l2.forward(x));
    };
    CHECK(grad_error(lin.weight.grad, numeric_grad(fw, lin.weight.value)) < 1e-2);
}

TEST_CASE("groupnorm gradients match finite differences") {
    GroupNorm gn(6, 3);
    Rng rng(29);
    rng.fill_normal(gn.gamma.value, 1.0f);
    rng.fill_normal(gn.beta.value, 0.5f);
    Tensor x = random_tensor({2, 6, 3, 3}, 31);
    GroupNormCtx ctx;
    Tensor y = gn.forward(x, ctx);
    SumLoss loss(y, 37);
    Tensor gx = gn.backward(ctx, loss.w);

    auto f = [&](const Tensor& xx) { return loss.value(gn.forward(xx)); };
    CHECK(grad_error(gx, numeric_grad(f, x)) < 2e-2);
    auto fg = [&](const Tensor& gg) {
        GroupNorm g2 = gn;
        g2.gamma.value = gg;
        return loss.value(g2.forward(x));
    };
    CHECK(grad_error(gn.gamma.grad, numeric_grad(fg, gn.gamma.value)) < 2e-2);
    auto fb = [&](const Tensor& bb) {
        GroupNorm g2 = gn;
        g2.beta.value = bb;
        return loss.value(g2.forward(x));
    };
    CHECK(grad_error(gn.beta.grad, numeric_grad(fb, gn.beta.value)) < 2e-2);
}

TEST_CASE("activation gradients match finite differences") {
    Tensor x = random_tensor({2, 3, 4, 4}, 41);
    SumLoss loss(x, 43);

    ActCtx ctx;
    silu(x, ctx);
    auto fs = [&](const Tensor& xx) { return loss.value(silu(xx)); };
    CHECK(grad_error(silu_backward(ctx, loss.w), numeric_grad(fs, x)) < 1e-2);

    sigmoid(x, ctx);
    auto fg = [&](const Tensor& xx) { return loss.value(sigmoid(xx)); };
    CHECK(grad_error(sigmoid_backward(ctx, loss.w), numeric_grad(fg, x)) < 1e-2);

    leaky_relu(x, 0.2f, ctx);
    auto fl = [&](const Tensor& xx) { return loss.value(leaky_relu(xx, 0.2f)); };
    // kink at 0 makes FD noisy only for |x| < eps; values here are generic
    CHECK(grad_error(leaky_relu_backward(ctx, 0.2f, loss.w), numeric_grad(fl, x)) < 5e-2);
}

TEST_CASE("upsample and pooling gradients") {
    Tensor x = random_tensor({2, 3, 4, 4}, 47);
    Tensor y = upsample2x_nearest(x);
    SumLoss loss(y, 53);
    auto f = [&](const Tensor& xx) { return loss.value(upsample2x_nearest(xx)); };
    CHECK(grad_error(upsample2x_nearest_backward(loss.w), numeric_grad(f, x)) < 1e-2);

    Tensor p = global_avg_pool(x);
    SumLoss ploss(p, 59);
    auto fp = [&](const Tensor& xx) { return ploss.value(global_avg_pool(xx)); };
    CHECK(grad_error(global_avg_pool_backward(x.shape(), ploss.w), numeric_grad(fp, x)) < 1e-2);
}

TEST_CASE("row normalization gradient") {
    Tensor x = random_tensor({3, 8}, 61);
    Tensor y = l2_normalize_rows(x);
    for (int i = 0; i < 3; ++i) {
        double n = 0;
        for (int j = 0; j < 8; ++j) n += static_cast<double>(y.at(i, j)) * y.at(i, j);
        CHECK(std::abs(n - 1.0) < 1e-5);
    }
    SumLoss loss(y, 67);
    auto f = [&](const Tensor& xx) { return loss.value(l2_normalize_rows(xx)); };
    CHECK(grad_error(l2_normalize_rows_backward(x, loss.w), numeric_grad(f, x)) < 1e-2);
}

TEST_CASE("resblock gradients, with and without time embedding") {
    Rng rng(71);
    for (int emb_dim : {0, 8}) {
        ResBlock rb(4, 6, emb_dim);
        rb.init(rng);
        Tensor x = random_tensor({2, 4, 4, 4}, 73);
        Tensor emb = random_tensor({2, 8}, 79);
        ResBlockCtx ctx;
        Tensor y = rb.forward(x, emb_dim ? &emb : nullptr, ctx);
        SumLoss loss(y, 83);
        Tensor gemb({2, 8});
        Tensor gx = rb.backward(ctx, loss.w, emb_dim ? &gemb : nullptr);

        auto f = [&](const Tensor& xx) {
            return loss.value(rb.forward(xx, emb_dim ? &emb : nullptr));
        };
        CHECK(grad_error(gx, numeric_grad(f, x)) < 3e-2);
        if (emb_dim) {
            auto fe = [&](const Tensor& ee) { return loss.value(rb.forward(x, &ee)); };
            CHECK(grad_error(gemb, numeric_grad(fe, emb)) < 3e-2);
        }
    }
}

TEST_CASE("noise embedding backward runs and trains") {
    Rng rng(89);
    NoiseEmbedding ne(16, 24);
    ne.init(rng);
    std::vector<float> t{0.1f, 1.0f, 2.5f};
    NoiseEmbeddingCtx ctx;
    Tensor y = ne.forward(t, ctx);
    CHECK(y.shape() == std::vector<int>{3, 24});
    ne.backward(ctx, Tensor::full(y.shape(), 1.0f));
    ParamRefs ps;
    ne.collect(ps);
    bool any = false;
    for (auto* p : ps)
        if (l2_norm(p->grad) > 0) any = true;
    CHECK(any);
}

TEST_CASE("adam reduces a quadratic") {
    Param p;
    p.init({4}, "p");
    Rng rng(97);
    rng.fill_normal(p.value, 2.0f);
    Adam opt(0.05f);
    ParamRefs ps{&p};
    for (int i = 0; i < 400; ++i) {
        zero_grads(ps);
        for (int j = 0; j < 4; ++j) p.grad[j] = 2.0f * p.value[j];
        opt.step(ps);
    }
    CHECK(l2_norm(p.value) < 1e-2);
}
