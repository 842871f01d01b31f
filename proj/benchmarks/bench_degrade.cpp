#include <benchmark/benchmark.h>

#include "latref/degrade/degrade.hpp"

using namespace latref;
using namespace latref::degrade;

static void DegradeApply(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Rng rng(17);
    ImageTensor img({3, size, size});
    rng.fill_uniform(img, 0.0f, 1.0f);
    DegradationRanges ranges;
    DegradationParams params = sample_params(9, ranges);
    uint64_t seed = 0;
    for (auto _ : state) {
        ImageTensor out = apply(img, params, ++seed);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(DegradeApply)->Arg(64)->Arg(128)->Arg(256);

static void JpegLikeRoundTrip(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    Rng rng(23);
    ImageTensor img({3, size, size});
    rng.fill_uniform(img, 0.0f, 1.0f);
    for (auto _ : state) {
        ImageTensor out = jpeg_like(img, 60.0);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(JpegLikeRoundTrip)->Arg(64)->Arg(256);
