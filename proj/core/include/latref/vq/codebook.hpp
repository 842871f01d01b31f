#pragma once

#include <cstdint>
#include <vector>

#include "latref/tensor.hpp"

namespace latref::vq {

/// K x d table of latent embedding vectors.
struct Codebook {
    Tensor entries;  // [K, d]

    int size() const { return entries.dim(0); }
    int dim() const { return entries.dim(1); }
    void validate() const;
};

/// LatentGrid snapped to codebook entries, with the chosen indices.
struct QuantizedLatent {
    Tensor data;                   // d x h x w, every spatial vector a codebook entry
    std::vector<int32_t> indices;  // h*w, row-major
    int h = 0, w = 0;

    int32_t index(int y, int x) const { return indices[static_cast<size_t>(y) * w + x]; }
};

/// Nearest codebook entry per spatial position (squared L2, accumulated in
/// double); ties resolve to the lowest index.
QuantizedLatent quantize(const Tensor& z, const Codebook& cb);

/// Batched variant for NCHW latents; returns flat indices per sample.
void quantize_batch(const Tensor& z, const Codebook& cb, Tensor& out,
                    std::vector<int32_t>& indices);

/// Straight-through estimator: forward value is the quantized latent,
/// gradient passes to the continuous latent unchanged.
Tensor straight_through(const Tensor& z, const QuantizedLatent& zq);
Tensor straight_through_backward(const Tensor& grad_out);

}  // namespace latref::vq
