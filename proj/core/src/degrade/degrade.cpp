#include "latref/degrade/degrade.hpp"

#include <cmath>

namespace latref::degrade {

void DegradationParams::validate() const {
    if (kernel.ndim() != 2 || kernel.dim(0) != kernel.dim(1) || kernel.dim(0) % 2 == 0)
        throw Error("degrade", "kernel must be square with odd side");
    double s = 0.0;
    for (int64_t i = 0; i < kernel.numel(); ++i) {
        if (kernel[i] < 0.0f) throw Error("degrade", "kernel has negative weights");
        s += kernel[i];
    }
    if (std::abs(s - 1.0) > 1e-6) throw Error("degrade", "kernel does not sum to 1");
    if (sigma < 0.0) throw Error("degrade", "sigma must be >= 0");
    if (scale < 1) throw Error("degrade", "scale must be >= 1");
    if (quality < 1.0 || quality > 100.0) throw Error("degrade", "quality outside [1,100]");
}

void DegradationRanges::validate() const {
    auto ok = [](const Interval& iv) { return iv.lo <= iv.hi; };
    if (!ok(kernel_sigma) || kernel_sigma.lo < 0.0)
        throw Error("degrade", "invalid kernel_sigma range");
    if (!ok(sigma) || sigma.lo < 0.0) throw Error("degrade", "invalid sigma range");
    if (!ok(scale) || scale.lo < 1.0) throw Error("degrade", "invalid scale range");
    if (!ok(quality) || quality.lo < 1.0 || quality.hi > 100.0)
        throw Error("degrade", "invalid quality range");
    if (kernel_max_radius < 1) throw Error("degrade", "kernel_max_radius must be >= 1");
}

Tensor gaussian_kernel(double sigma, int max_radius) {
    int radius = sigma <= 1e-6 ? 0 : static_cast<int>(std::ceil(3.0 * sigma));
    radius = std::min(radius, max_radius);
    const int side = 2 * radius + 1;
    Tensor k({side, side});
    if (radius == 0) {
        k[0] = 1.0f;
        return k;
    }
    double total = 0.0;
    for (int y = -radius; y <= radius; ++y)
        for (int x = -radius; x <= radius; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            k.at(y + radius, x + radius) = static_cast<float>(v);
            total += v;
        }
    for (int64_t i = 0; i < k.numel(); ++i)
        k[i] = static_cast<float>(static_cast<double>(k[i]) / total);
    return k;
}

DegradationParams sample_params(uint64_t rng_seed, const DegradationRanges& ranges) {
    ranges.validate();
    Rng rng(rng_seed);
    DegradationParams p;
    const double ks = rng.uniform(ranges.kernel_sigma.lo, ranges.kernel_sigma.hi);
    p.kernel = gaussian_kernel(ks, ranges.kernel_max_radius);
    p.sigma = rng.uniform(ranges.sigma.lo, ranges.sigma.hi);
    p.scale = rng.uniform_int(static_cast<int>(ranges.scale.lo),
                              static_cast<int>(ranges.scale.hi));
    p.quality = rng.uniform(ranges.quality.lo, ranges.quality.hi);
    p.validate();
    return p;
}

namespace {

inline int reflect(int i, int n) {
    // symmetric padding: -1 -> 0, n -> n-1
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
}

ImageTensor convolve_reflect(const ImageTensor& x, const Tensor& kernel) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int side = kernel.dim(0), radius = side / 2;
    if (side == 1 && kernel[0] == 1.0f) return x;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int ky = -radius; ky <= radius; ++ky) {
                    const int yy = reflect(y + ky, h);
                    for (int kx = -radius; kx <= radius; ++kx) {
                        const int xi = reflect(xx + kx, w);
                        acc += static_cast<double>(kernel.at(ky + radius, kx + radius)) *
                               x.at(ch, yy, xi);
                    }
                }
                out.at(ch, y, xx) = static_cast<float>(acc);
            }
    return out;
}

ImageTensor pad_to_multiple(const ImageTensor& x, int s) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ph = (s - h % s) % s, pw = (s - w % s) % s;
    if (ph == 0 && pw == 0) return x;
    Tensor out({c, h + ph, w + pw});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h + ph; ++y)
            for (int xx = 0; xx < w + pw; ++xx)
                out.at(ch, y, xx) = x.at(ch, std::min(y, h - 1), std::min(xx, w - 1));
    return out;
}

ImageTensor block_mean_downsample(const ImageTensor& x, int s) {
    if (s == 1) return x;
    const ImageTensor padded = pad_to_multiple(x, s);
    const int c = padded.dim(0), h = padded.dim(1), w = padded.dim(2);
    Tensor out({c, h / s, w / s});
    const double inv = 1.0 / (static_cast<double>(s) * s);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / s; ++y)
            for (int xx = 0; xx < w / s; ++xx) {
                double acc = 0.0;
                for (int dy = 0; dy < s; ++dy)
                    for (int dx = 0; dx < s; ++dx) acc += padded.at(ch, y * s + dy, xx * s + dx);
                out.at(ch, y, xx) = static_cast<float>(acc * inv);
            }
    return out;
}

}  // namespace

ImageTensor blur_downsample(const ImageTensor& x, const Tensor& kernel, int scale) {
    return block_mean_downsample(convolve_reflect(x, kernel), scale);
}

ImageTensor apply(const ImageTensor& x, const DegradationParams& p, uint64_t noise_seed) {
    require_image(x, "degrade.apply");
    p.validate();
    ImageTensor y = blur_downsample(x, p.kernel, p.scale);
    if (p.sigma > 0.0) {
        Rng rng(noise_seed);
        for (int64_t i = 0; i < y.numel(); ++i)
            y[i] += static_cast<float>(p.sigma * rng.normal());
    }
    y = jpeg_like(y, p.quality);
    return clamp01(std::move(y));
}

Pair make_pair(const ImageTensor& x, uint64_t seed, const DegradationRanges& ranges,
               int working_resolution) {
    Pair pair;
    pair.clean = fit_to_resolution(x, working_resolution);
    pair.params = sample_params(mix_seed(seed, 0x9d), ranges);
    ImageTensor low = apply(pair.clean, pair.params, mix_seed(seed, 0x5e));
    pair.degraded_upsampled = resize_bicubic(low, working_resolution, working_resolution);
    return pair;
}

}  // namespace latref::degrade
