#include "latref/nn/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>

namespace latref::nn {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void zero_grads(const ParamRefs& params) {
    for (Param* p : params) p->zero_grad();
}

bool params_finite(const ParamRefs& params) {
    for (Param* p : params)
        if (!p->value.all_finite()) return false;
    return true;
}

void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool trans_a,
          bool trans_b, float beta) {
    MatMap C(c, m, n);
    if (!trans_a && !trans_b) {
        ConstMatMap A(a, m, k), B(b, k, n);
        if (beta == 0.0f)
            C.noalias() = A * B;
        else
            C.noalias() += A * B;
    } else if (!trans_a && trans_b) {
        ConstMatMap A(a, m, k), B(b, n, k);
        if (beta == 0.0f)
            C.noalias() = A * B.transpose();
        else
            C.noalias() += A * B.transpose();
    } else if (trans_a && !trans_b) {
        ConstMatMap A(a, k, m), B(b, k, n);
        if (beta == 0.0f)
            C.noalias() = A.transpose() * B;
        else
            C.noalias() += A.transpose() * B;
    } else {
        ConstMatMap A(a, k, m), B(b, n, k);
        if (beta == 0.0f)
            C.noalias() = A.transpose() * B.transpose();
        else
            C.noalias() += A.transpose() * B.transpose();
    }
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride),
      pad_(pad < 0 ? ksize / 2 : pad) {
    weight.init({out_ch, in_ch * ksize * ksize}, "conv.w");
    bias.init({out_ch}, "conv.b");
}

void Conv2d::init(Rng& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(in_ch_ * k_ * k_));
    rng.fill_uniform(weight.value, -bound, bound);
    bias.value.fill(0.0f);
}

namespace {

void im2col(const Tensor& x, int k, int stride, int pad, int oh, int ow, Tensor& cols) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int row_len = c * k * k;
    cols = Tensor({n * oh * ow, row_len});
    float* out = cols.data();
    for (int img = 0; img < n; ++img) {
        const float* src = x.data() + static_cast<size_t>(img) * c * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                float* row = out + (static_cast<size_t>(img) * oh * ow + oy * ow + ox) * row_len;
                for (int ch = 0; ch < c; ++ch) {
                    const float* plane = src + static_cast<size_t>(ch) * h * w;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        float* dst = row + (ch * k + ky) * k;
                        if (iy < 0 || iy >= h) {
                            std::memset(dst, 0, sizeof(float) * k);
                            continue;
                        }
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            dst[kx] = (ix < 0 || ix >= w) ? 0.0f : plane[iy * w + ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const Tensor& gcols, const std::vector<int>& in_shape, int k, int stride, int pad,
            int oh, int ow, Tensor& gx) {
    const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
    const int row_len = c * k * k;
    gx = Tensor(in_shape);
    for (int img = 0; img < n; ++img) {
        float* dst_img = gx.data() + static_cast<size_t>(img) * c * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const float* row =
                    gcols.data() + (static_cast<size_t>(img) * oh * ow + oy * ow + ox) * row_len;
                for (int ch = 0; ch < c; ++ch) {
                    float* plane = dst_img + static_cast<size_t>(ch) * h * w;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const float* src = row + (ch * k + ky) * k;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= w) continue;
                            plane[iy * w + ix] += src[kx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::run(const Tensor& x, Conv2dCtx* ctx) const {
    if (x.ndim() != 4 || x.dim(1) != in_ch_)
        throw Error("shape", "Conv2d input " + x.shape_str() + ", expected channels " +
                                 std::to_string(in_ch_));
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_size(h), ow = out_size(w);
    Tensor cols_local;
    Tensor& cols = ctx ? ctx->cols : cols_local;
    im2col(x, k_, stride_, pad_, oh, ow, cols);
    if (ctx) ctx->in_shape = x.shape();

    Tensor y({n, out_ch_, oh, ow});
    // cols [N*OH*OW, C*k*k] * W^T [C*k*k, out] -> [N*OH*OW, out]
    Tensor yt({n * oh * ow, out_ch_});
    gemm(cols.data(), weight.value.data(), yt.data(), n * oh * ow, in_ch_ * k_ * k_, out_ch_,
         false, true, 0.0f);
    // transpose rows into NCHW and add bias
    const float* b = bias.value.data();
    for (int img = 0; img < n; ++img)
        for (int oc = 0; oc < out_ch_; ++oc) {
            float* dst = y.data() + (static_cast<size_t>(img) * out_ch_ + oc) * oh * ow;
            const float* src = yt.data() + static_cast<size_t>(img) * oh * ow * out_ch_ + oc;
            const float bb = b[oc];
            for (int i = 0; i < oh * ow; ++i) dst[i] = src[static_cast<size_t>(i) * out_ch_] + bb;
        }
    return y;
}

Tensor Conv2d::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor Conv2d::forward(const Tensor& x, Conv2dCtx& ctx) const { return run(x, &ctx); }

namespace {

Tensor repack_nchw_to_rows(const Tensor& gy, int out_ch) {
    const int n = gy.dim(0), oh = gy.dim(2), ow = gy.dim(3);
    Tensor gyt({n * oh * ow, out_ch});
    for (int img = 0; img < n; ++img)
        for (int oc = 0; oc < out_ch; ++oc) {
            const float* src = gy.data() + (static_cast<size_t>(img) * out_ch + oc) * oh * ow;
            float* dst = gyt.data() + static_cast<size_t>(img) * oh * ow * out_ch + oc;
            for (int i = 0; i < oh * ow; ++i) dst[static_cast<size_t>(i) * out_ch] = src[i];
        }
    return gyt;
}

}  // namespace

Tensor Conv2d::backward(const Conv2dCtx& ctx, const Tensor& gy) {
    const int n = gy.dim(0), oh = gy.dim(2), ow = gy.dim(3);
    Tensor gyt = repack_nchw_to_rows(gy, out_ch_);
    // gW += gy^T * cols
    gemm(gyt.data(), ctx.cols.data(), weight.grad.data(), out_ch_, n * oh * ow, in_ch_ * k_ * k_,
         true, false, 1.0f);
    // gb += column sums of gyt
    for (int64_t i = 0; i < gyt.numel(); ++i) bias.grad[i % out_ch_] += gyt[i];
    return backward_input(ctx, gy);
}

Tensor Conv2d::backward_input(const Conv2dCtx& ctx, const Tensor& gy) const {
    const int n = gy.dim(0), oh = gy.dim(2), ow = gy.dim(3);
    Tensor gyt = repack_nchw_to_rows(gy, out_ch_);
    Tensor gcols({n * oh * ow, in_ch_ * k_ * k_});
    gemm(gyt.data(), weight.value.data(), gcols.data(), n * oh * ow, out_ch_, in_ch_ * k_ * k_,
         false, false, 0.0f);
    Tensor gx;
    col2im(gcols, ctx.in_shape, k_, stride_, pad_, oh, ow, gx);
    return gx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
    weight.init({out_dim, in_dim}, "linear.w");
    bias.init({out_dim}, "linear.b");
}

void Linear::init(Rng& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(in_dim_));
    rng.fill_uniform(weight.value, -bound, bound);
    bias.value.fill(0.0f);
}

Tensor Linear::forward(const Tensor& x) const {
    const int n = x.dim(0);
    Tensor y({n, out_dim_});
    gemm(x.data(), weight.value.data(), y.data(), n, in_dim_, out_dim_, false, true, 0.0f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim_; ++j) y.at(i, j) += bias.value[j];
    return y;
}

Tensor Linear::forward(const Tensor& x, LinearCtx& ctx) const {
    ctx.x = x;
    return forward(x);
}

Tensor Linear::backward(const LinearCtx& ctx, const Tensor& gy) {
    const int n = gy.dim(0);
    gemm(gy.data(), ctx.x.data(), weight.grad.data(), out_dim_, n, in_dim_, true, false, 1.0f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim_; ++j) bias.grad[j] += gy.at(i, j);
    return backward_input(gy);
}

Tensor Linear::backward_input(const Tensor& gy) const {
    const int n = gy.dim(0);
    Tensor gx({n, in_dim_});
    gemm(gy.data(), weight.value.data(), gx.data(), n, out_dim_, in_dim_, false, false, 0.0f);
    return gx;
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm::GroupNorm(int channels, int groups) : channels_(channels), groups_(groups) {
    if (channels % groups != 0) throw Error("nn", "GroupNorm channels not divisible by groups");
    gamma.init({channels}, "gn.gamma");
    gamma.value.fill(1.0f);
    beta.init({channels}, "gn.beta");
}

Tensor GroupNorm::run(const Tensor& x, GroupNormCtx* ctx) const {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cpg = c / groups_;
    const int64_t group_len = static_cast<int64_t>(cpg) * h * w;
    Tensor y(x.shape());
    Tensor x_hat(x.shape());
    Tensor inv_std({n, groups_});
    for (int img = 0; img < n; ++img) {
        for (int g = 0; g < groups_; ++g) {
            const float* src =
                x.data() + (static_cast<size_t>(img) * c + static_cast<size_t>(g) * cpg) * h * w;
            double m = 0.0;
            for (int64_t i = 0; i < group_len; ++i) m += src[i];
            m /= static_cast<double>(group_len);
            double var = 0.0;
            for (int64_t i = 0; i < group_len; ++i) {
                const double d = src[i] - m;
                var += d * d;
            }
            var /= static_cast<double>(group_len);
            const float is = static_cast<float>(1.0 / std::sqrt(var + kEps));
            inv_std.at(img, g) = is;
            float* xh = x_hat.data() +
                        (static_cast<size_t>(img) * c + static_cast<size_t>(g) * cpg) * h * w;
            float* dst =
                y.data() + (static_cast<size_t>(img) * c + static_cast<size_t>(g) * cpg) * h * w;
            const float mf = static_cast<float>(m);
            for (int ch = 0; ch < cpg; ++ch) {
                const float ga = gamma.value[g * cpg + ch];
                const float be = beta.value[g * cpg + ch];
                for (int i = 0; i < h * w; ++i) {
                    const int64_t idx = static_cast<int64_t>(ch) * h * w + i;
                    const float xhv = (src[idx] - mf) * is;
                    xh[idx] = xhv;
                    dst[idx] = xhv * ga + be;
                }
            }
        }
    }
    if (ctx) {
        ctx->x_hat = std::move(x_hat);
        ctx->inv_std = std::move(inv_std);
    }
    return y;
}

Tensor GroupNorm::forward(const Tensor& x) const { return run(x, nullptr); }
Tensor GroupNorm::forward(const Tensor& x, GroupNormCtx& ctx) const { return run(x, &ctx); }

namespace {

void groupnorm_backward_impl(const GroupNormCtx& ctx, const Tensor& gy, const Tensor& gamma_val,
                             int groups, Tensor* gx, Tensor* dgamma, Tensor* dbeta) {
    const auto& shape = ctx.x_hat.shape();
    const int n = shape[0], c = shape[1], h = shape[2], w = shape[3];
    const int cpg = c / groups;
    const int64_t group_len = static_cast<int64_t>(cpg) * h * w;
    for (int img = 0; img < n; ++img) {
        for (int g = 0; g < groups; ++g) {
            const size_t base = (static_cast<size_t>(img) * c + static_cast<size_t>(g) * cpg) *
                                static_cast<size_t>(h) * w;
            const float* xh = ctx.x_hat.data() + base;
            const float* gyp = gy.data() + base;
            double sum_gh = 0.0, sum_gh_xh = 0.0;
            for (int ch = 0; ch < cpg; ++ch) {
                const float ga = gamma_val[g * cpg + ch];
                double dga = 0.0, dbe = 0.0;
                for (int i = 0; i < h * w; ++i) {
                    const int64_t idx = static_cast<int64_t>(ch) * h * w + i;
                    const double gyv = gyp[idx];
                    dga += gyv * xh[idx];
                    dbe += gyv;
                    const double gh = gyv * ga;
                    sum_gh += gh;
                    sum_gh_xh += gh * xh[idx];
                }
                if (dgamma) (*dgamma)[g * cpg + ch] += static_cast<float>(dga);
                if (dbeta) (*dbeta)[g * cpg + ch] += static_cast<float>(dbe);
            }
            const double inv_len = 1.0 / static_cast<double>(group_len);
            const float is = ctx.inv_std.at(img, g);
            float* gxp = gx->data() + base;
            for (int ch = 0; ch < cpg; ++ch) {
                const float ga = gamma_val[g * cpg + ch];
                for (int i = 0; i < h * w; ++i) {
                    const int64_t idx = static_cast<int64_t>(ch) * h * w + i;
                    const double gh = static_cast<double>(gyp[idx]) * ga;
                    gxp[idx] = static_cast<float>(
                        is * (gh - inv_len * sum_gh - inv_len * sum_gh_xh * xh[idx]));
                }
            }
        }
    }
}

}  // namespace

Tensor GroupNorm::backward(const GroupNormCtx& ctx, const Tensor& gy) {
    Tensor gx(ctx.x_hat.shape());
    groupnorm_backward_impl(ctx, gy, gamma.value, groups_, &gx, &gamma.grad, &beta.grad);
    return gx;
}

Tensor GroupNorm::backward_input(const GroupNormCtx& ctx, const Tensor& gy) const {
    Tensor gx(ctx.x_hat.shape());
    groupnorm_backward_impl(ctx, gy, gamma.value, groups_, &gx, nullptr, nullptr);
    return gx;
}

// ---------------------------------------------------------------------------
// Activations

Tensor silu(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
    return y;
}

Tensor silu(const Tensor& x, ActCtx& ctx) {
    ctx.x = x;
    return silu(x);
}

Tensor silu_backward(const ActCtx& ctx, const Tensor& gy) {
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) {
        const float v = ctx.x[i];
        const float s = 1.0f / (1.0f + std::exp(-v));
        gx[i] = gy[i] * s * (1.0f + v * (1.0f - s));
    }
    return gx;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
    return y;
}

Tensor sigmoid(const Tensor& x, ActCtx& ctx) {
    ctx.x = x;
    return sigmoid(x);
}

Tensor sigmoid_backward(const ActCtx& ctx, const Tensor& gy) {
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-ctx.x[i]));
        gx[i] = gy[i] * s * (1.0f - s);
    }
    return gx;
}

Tensor leaky_relu(const Tensor& x, float slope) {
    Tensor y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
    return y;
}

Tensor leaky_relu(const Tensor& x, float slope, ActCtx& ctx) {
    ctx.x = x;
    return leaky_relu(x, slope);
}

Tensor leaky_relu_backward(const ActCtx& ctx, float slope, const Tensor& gy) {
    Tensor gx(gy.shape());
    for (int64_t i = 0; i < gy.numel(); ++i) gx[i] = ctx.x[i] >= 0.0f ? gy[i] : slope * gy[i];
    return gx;
}

// ---------------------------------------------------------------------------
// Resampling / pooling

Tensor upsample2x_nearest(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, 2 * h, 2 * w});
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const float* src = x.data() + (static_cast<size_t>(img) * c + ch) * h * w;
            float* dst = y.data() + (static_cast<size_t>(img) * c + ch) * 4 * h * w;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const float v = src[i * w + j];
                    dst[(2 * i) * 2 * w + 2 * j] = v;
                    dst[(2 * i) * 2 * w + 2 * j + 1] = v;
                    dst[(2 * i + 1) * 2 * w + 2 * j] = v;
                    dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
                }
        }
    return y;
}

Tensor upsample2x_nearest_backward(const Tensor& gy) {
    const int n = gy.dim(0), c = gy.dim(1), h2 = gy.dim(2), w2 = gy.dim(3);
    const int h = h2 / 2, w = w2 / 2;
    Tensor gx({n, c, h, w});
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const float* src = gy.data() + (static_cast<size_t>(img) * c + ch) * h2 * w2;
            float* dst = gx.data() + (static_cast<size_t>(img) * c + ch) * h * w;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    dst[i * w + j] = src[(2 * i) * w2 + 2 * j] + src[(2 * i) * w2 + 2 * j + 1] +
                                     src[(2 * i + 1) * w2 + 2 * j] +
                                     src[(2 * i + 1) * w2 + 2 * j + 1];
        }
    return gx;
}

Tensor global_avg_pool(const Tensor& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const float* src = x.data() + (static_cast<size_t>(img) * c + ch) * h * w;
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += src[i];
            y.at(img, ch) = static_cast<float>(s * inv);
        }
    return y;
}

Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& gy) {
    const int n = in_shape[0], c = in_shape[1], h = in_shape[2], w = in_shape[3];
    Tensor gx(in_shape);
    const float inv = 1.0f / static_cast<float>(h * w);
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            float* dst = gx.data() + (static_cast<size_t>(img) * c + ch) * h * w;
            const float g = gy.at(img, ch) * inv;
            for (int i = 0; i < h * w; ++i) dst[i] = g;
        }
    return gx;
}

Tensor l2_normalize_rows(const Tensor& x) {
    const int n = x.dim(0), d = x.dim(1);
    Tensor y(x.shape());
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += static_cast<double>(x.at(i, j)) * x.at(i, j);
        const float inv = static_cast<float>(1.0 / std::sqrt(std::max(s, 1e-24)));
        for (int j = 0; j < d; ++j) y.at(i, j) = x.at(i, j) * inv;
    }
    return y;
}

Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& gy) {
    const int n = x.dim(0), d = x.dim(1);
    Tensor gx(x.shape());
    for (int i = 0; i < n; ++i) {
        double s = 0.0, gdoty = 0.0;
        for (int j = 0; j < d; ++j) s += static_cast<double>(x.at(i, j)) * x.at(i, j);
        const double norm = std::sqrt(std::max(s, 1e-24));
        for (int j = 0; j < d; ++j) gdoty += static_cast<double>(gy.at(i, j)) * x.at(i, j) / norm;
        for (int j = 0; j < d; ++j)
            gx.at(i, j) = static_cast<float>(
                (static_cast<double>(gy.at(i, j)) - gdoty * x.at(i, j) / norm) / norm);
    }
    return gx;
}

}  // namespace latref::nn
