#pragma once

#include <string>
#include <vector>

#include "latref/rng.hpp"
#include "latref/tensor.hpp"

namespace latref::nn {

/// Learnable array with its gradient accumulator. Layers accumulate into
/// `grad` on backward; the optimizer consumes and the caller zeroes it.
struct Param {
    Tensor value;
    Tensor grad;
    std::string name;

    void init(std::vector<int> shape, std::string n) {
        value = Tensor(shape);
        grad = Tensor(shape);
        name = std::move(n);
    }
    void zero_grad() { grad.fill(0.0f); }
};

using ParamRefs = std::vector<Param*>;

void zero_grads(const ParamRefs& params);
bool params_finite(const ParamRefs& params);

/// C = A * B for row-major matrices, via Eigen. A is [m,k], B is [k,n].
void gemm(const float* a, const float* b, float* c, int m, int k, int n, bool trans_a,
          bool trans_b, float beta);

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dCtx {
    Tensor cols;  // im2col matrix [N*OH*OW, C*k*k]
    std::vector<int> in_shape;
};

/// Zero-padded 2-D convolution on NCHW input, im2col + GEMM.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int ksize, int stride = 1, int pad = -1);

    void init(Rng& rng);  // He-uniform weights, zero bias
    Tensor forward(const Tensor& x) const;
    Tensor forward(const Tensor& x, Conv2dCtx& ctx) const;
    /// Returns grad wrt input; accumulates weight/bias grads.
    Tensor backward(const Conv2dCtx& ctx, const Tensor& gy);
    /// Frozen path: grad wrt input only, parameters untouched.
    Tensor backward_input(const Conv2dCtx& ctx, const Tensor& gy) const;

    void collect(ParamRefs& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    int out_size(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

    Param weight;  // [out_ch, in_ch*k*k]
    Param bias;    // [out_ch]
    int in_ch() const { return in_ch_; }
    int out_ch() const { return out_ch_; }

private:
    Tensor run(const Tensor& x, Conv2dCtx* ctx) const;
    int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
};

// ---------------------------------------------------------------------------
// Linear

struct LinearCtx {
    Tensor x;  // [N, in]
};

class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim);

    void init(Rng& rng);
    Tensor forward(const Tensor& x) const;  // [N,in] -> [N,out]
    Tensor forward(const Tensor& x, LinearCtx& ctx) const;
    Tensor backward(const LinearCtx& ctx, const Tensor& gy);
    Tensor backward_input(const Tensor& gy) const;

    void collect(ParamRefs& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    Param weight;  // [out, in]
    Param bias;    // [out]

private:
    int in_dim_ = 0, out_dim_ = 0;
};

// ---------------------------------------------------------------------------
// GroupNorm

struct GroupNormCtx {
    Tensor x_hat;     // normalized input
    Tensor inv_std;   // [N, groups]
};

/// GroupNorm over (C/groups, H, W) per sample, with affine scale/shift.
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(int channels, int groups);

    Tensor forward(const Tensor& x) const;
    Tensor forward(const Tensor& x, GroupNormCtx& ctx) const;
    Tensor backward(const GroupNormCtx& ctx, const Tensor& gy);
    Tensor backward_input(const GroupNormCtx& ctx, const Tensor& gy) const;

    void collect(ParamRefs& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    Param gamma;  // [C], init 1
    Param beta;   // [C], init 0

private:
    Tensor run(const Tensor& x, GroupNormCtx* ctx) const;
    int channels_ = 0, groups_ = 1;
    static constexpr float kEps = 1e-5f;
};

// ---------------------------------------------------------------------------
// Elementwise activations

struct ActCtx {
    Tensor x;
};

Tensor silu(const Tensor& x);
Tensor silu(const Tensor& x, ActCtx& ctx);
Tensor silu_backward(const ActCtx& ctx, const Tensor& gy);

Tensor sigmoid(const Tensor& x);
Tensor sigmoid(const Tensor& x, ActCtx& ctx);
Tensor sigmoid_backward(const ActCtx& ctx, const Tensor& gy);

Tensor leaky_relu(const Tensor& x, float slope);
Tensor leaky_relu(const Tensor& x, float slope, ActCtx& ctx);
Tensor leaky_relu_backward(const ActCtx& ctx, float slope, const Tensor& gy);

// ---------------------------------------------------------------------------
// Resampling / pooling

Tensor upsample2x_nearest(const Tensor& x);
Tensor upsample2x_nearest_backward(const Tensor& gy);

Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& gy);

/// y = v / ||v|| rows of [N,D]; backward projects out the radial component.
Tensor l2_normalize_rows(const Tensor& x);
Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& gy);

}  // namespace latref::nn
