#include <benchmark/benchmark.h>

#include "latref/rng.hpp"
#include "latref/vq/codebook.hpp"

using namespace latref;

static void QuantizeGrid(benchmark::State& state) {
    const int K = static_cast<int>(state.range(0));
    const int side = static_cast<int>(state.range(1));
    Rng rng(11);
    vq::Codebook cb;
    cb.entries = Tensor({K, 3});
    rng.fill_normal(cb.entries);
    Tensor z({3, side, side});
    rng.fill_normal(z);
    for (auto _ : state) {
        auto q = vq::quantize(z, cb);
        benchmark::DoNotOptimize(q.indices.data());
    }
    state.SetItemsProcessed(state.iterations() * side * side * K);
}
BENCHMARK(QuantizeGrid)->Args({64, 8})->Args({512, 16})->Args({8192, 128});
