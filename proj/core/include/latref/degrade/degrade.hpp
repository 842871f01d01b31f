#pragma once

#include <cstdint>

#include "latref/image.hpp"
#include "latref/rng.hpp"

namespace latref::degrade {

/// One concrete draw of the degradation operator x_d = ((x (*) k) v_s + n_sigma)_q.
struct DegradationParams {
    Tensor kernel;        // odd side, non-negative, sums to 1
    double sigma = 0.0;   // noise std on the [0,1] intensity scale
    int scale = 1;        // integer downscale factor s >= 1
    double quality = 100; // compression quality factor in [1,100]

    void validate() const;
};

struct Interval {
    double lo = 0.0, hi = 0.0;
    bool contains(double v) const { return v >= lo && v <= hi; }
};

struct DegradationRanges {
    Interval kernel_sigma{0.2, 2.4};  // Gaussian blur width
    Interval sigma{0.0, 20.0 / 255.0};
    Interval scale{1, 4};
    Interval quality{30, 90};
    int kernel_max_radius = 6;

    void validate() const;
};

Tensor gaussian_kernel(double sigma, int max_radius);

DegradationParams sample_params(uint64_t rng_seed, const DegradationRanges& ranges);

/// Blur (reflect padding), s x s block-mean downsample, additive Gaussian
/// noise, block-DCT compression at quality q, clamp to [0,1].
/// Output is (H/s) x (W/s); inputs not divisible by s are edge-padded first.
ImageTensor apply(const ImageTensor& x, const DegradationParams& p, uint64_t noise_seed);

struct Pair {
    ImageTensor clean;
    ImageTensor degraded_upsampled;
    DegradationParams params;
};

/// Clean image plus its degraded counterpart upsampled back to working
/// resolution (bicubic), so both sides share the encoder input shape.
Pair make_pair(const ImageTensor& x, uint64_t seed, const DegradationRanges& ranges,
               int working_resolution);

/// Blur + downsample only; the deterministic part ahead of the noise stage.
ImageTensor blur_downsample(const ImageTensor& x, const Tensor& kernel, int scale);

/// Internal block-DCT quantization codec emulating JPEG-style loss.
ImageTensor jpeg_like(const ImageTensor& x, double quality);

}  // namespace latref::degrade
