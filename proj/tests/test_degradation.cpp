#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latref/degrade/degrade.hpp"
#include "latref/metrics/metrics.hpp"
#include "latref/pipeline/toy_faces.hpp"
#include "test_util.hpp"

using namespace latref;
using namespace latref::degrade;

namespace {

ImageTensor toy_image(int size, int identity = 3) {
    pipeline::ToyFacesSpec spec;
    spec.size = size;
    return pipeline::toy_face(spec, identity, 0);
}

DegradationParams identity_params() {
    DegradationParams p;
    p.kernel = Tensor::from({1, 1}, {1.0f});
    p.sigma = 0.0;
    p.scale = 1;
    p.quality = 100.0;
    return p;
}

}  // namespace

TEST_CASE("identity parameters round-trip within 1/255 per pixel") {
    ImageTensor x = toy_image(64);
    ImageTensor y = apply(x, identity_params(), 5);
    CHECK(max_abs_diff(x, y) <= 1.0 / 255.0);
}

TEST_CASE("downscale by 32 turns 512 into 16") {
    ImageTensor x = toy_image(512);
    DegradationParams p = identity_params();
    p.scale = 32;
    ImageTensor y = apply(x, p, 7);
    CHECK(y.shape() == std::vector<int>{3, 16, 16});
}

TEST_CASE("apply is deterministic given image, params and seed") {
    ImageTensor x = toy_image(64);
    DegradationRanges ranges;
    DegradationParams p = sample_params(99, ranges);
    ImageTensor a = apply(x, p, 1234);
    ImageTensor b = apply(x, p, 1234);
    CHECK(bit_equal(a, b));
    ImageTensor c = apply(x, p, 1235);
    CHECK(!bit_equal(a, c));
}

TEST_CASE("kernel is normalized and mean intensity is preserved before noise") {
    for (double ks : {0.4, 1.0, 2.2}) {
        Tensor k = gaussian_kernel(ks, 6);
        CHECK(std::abs(sum(k) - 1.0) < 1e-6);
        for (int64_t i = 0; i < k.numel(); ++i) CHECK(k[i] >= 0.0f);
    }

    ImageTensor x = toy_image(64);
    for (int s : {1, 2, 4}) {
        ImageTensor y = blur_downsample(x, gaussian_kernel(1.4, 6), s);
        CHECK(std::abs(mean(y) - mean(x)) < 1e-3);
    }
}

TEST_CASE("noise variance matches sigma^2 on a constant image") {
    ImageTensor x = Tensor::full({3, 64, 64}, 0.5f);
    DegradationParams p = identity_params();
    p.sigma = 0.1;
    ImageTensor base = blur_downsample(x, p.kernel, p.scale);
    ImageTensor noisy = apply(x, p, 777);
    double var = 0.0;
    for (int64_t i = 0; i < noisy.numel(); ++i) {
        const double d = static_cast<double>(noisy[i]) - base[i];
        var += d * d;
    }
    var /= static_cast<double>(noisy.numel());  // > 1e4 samples
    CHECK(var > 0.9 * 0.01);
    CHECK(var < 1.1 * 0.01);
}

TEST_CASE("psnr decreases as noise grows") {
    ImageTensor x = toy_image(64);
    double prev = 1e9;
    for (double sigma : {0.02, 0.08, 0.2}) {
        DegradationParams p = identity_params();
        p.sigma = sigma;
        const double v = metrics::psnr(x, apply(x, p, 31));
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("sample_params: determinism, ranges, moments") {
    DegradationRanges ranges;
    DegradationParams a = sample_params(17, ranges);
    DegradationParams b = sample_params(17, ranges);
    CHECK(a.sigma == b.sigma);
    CHECK(a.scale == b.scale);
    CHECK(a.quality == b.quality);
    CHECK(bit_equal(a.kernel, b.kernel));

    // each draw stays inside its interval
    for (uint64_t seed = 0; seed < 200; ++seed) {
        DegradationParams p = sample_params(seed, ranges);
        CHECK(p.sigma >= ranges.sigma.lo);
        CHECK(p.sigma <= ranges.sigma.hi);
        CHECK(p.scale >= static_cast<int>(ranges.scale.lo));
        CHECK(p.scale <= static_cast<int>(ranges.scale.hi));
        CHECK(p.quality >= ranges.quality.lo);
        CHECK(p.quality <= ranges.quality.hi);
    }

    // collapsed intervals give exactly those values
    DegradationRanges point;
    point.kernel_sigma = {1.0, 1.0};
    point.sigma = {0.05, 0.05};
    point.scale = {2, 2};
    point.quality = {80, 80};
    DegradationParams p = sample_params(3, point);
    CHECK(p.sigma == doctest::Approx(0.05));
    CHECK(p.scale == 2);
    CHECK(p.quality == doctest::Approx(80.0));

    // monte-carlo mean of sigma over [0, 20/255]
    const double hi = 20.0 / 255.0;
    double acc = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        acc += sample_params(static_cast<uint64_t>(i) + 1000, ranges).sigma;
    acc /= n;
    const double se = hi / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc - hi / 2.0) < 3.0 * se);
}

TEST_CASE("make_pair is reproducible and shape-consistent") {
    ImageTensor x = toy_image(96);  // ingestion path crops/resizes to 64
    DegradationRanges ranges;
    Pair a = make_pair(x, 42, ranges, 64);
    Pair b = make_pair(x, 42, ranges, 64);
    CHECK(bit_equal(a.clean, b.clean));
    CHECK(bit_equal(a.degraded_upsampled, b.degraded_upsampled));
    CHECK(a.clean.shape() == std::vector<int>{3, 64, 64});
    CHECK(a.degraded_upsampled.shape() == std::vector<int>{3, 64, 64});

    // identity ranges give a near-identical pair
    DegradationRanges ident;
    ident.kernel_sigma = {0.0, 0.0};
    ident.sigma = {0.0, 0.0};
    ident.scale = {1, 1};
    ident.quality = {100, 100};
    Pair c = make_pair(toy_image(64), 7, ident, 64);
    CHECK(max_abs_diff(c.clean, c.degraded_upsampled) <= 1.0 / 255.0);
}

TEST_CASE("jpeg-like codec degrades smoothly with quality") {
    ImageTensor x = toy_image(64);
    const double q90 = metrics::psnr(x, jpeg_like(x, 90.0));
    const double q30 = metrics::psnr(x, jpeg_like(x, 30.0));
    CHECK(q90 > q30);
    CHECK(q30 > 15.0);
}

TEST_CASE("non-divisible sizes are padded before downsampling") {
    ImageTensor x = toy_image(66);
    DegradationParams p = identity_params();
    p.scale = 4;
    ImageTensor y = apply(x, p, 3);
    CHECK(y.dim(1) == 17);  // ceil(66/4)
    CHECK(y.dim(2) == 17);
}
