#include <benchmark/benchmark.h>

#include "latref/diffusion/sampler.hpp"

using namespace latref;
using namespace latref::diffusion;

static void HeunTrajectory(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(3);
    Tensor z({3, 16, 16});
    rng.fill_normal(z, 2.0f);
    ScoreFn analytic = [](const Tensor& x, float t) {
        Tensor s(x.shape());
        const float denom = 1.0f + t * t;
        for (int64_t i = 0; i < x.numel(); ++i) s[i] = -x[i] / denom;
        return s;
    };
    SigmaSchedule sched = sigma_schedule(0.01f, 2.0f, n, 7.0f);
    for (auto _ : state) {
        Tensor out = sample(z, sched, analytic);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(HeunTrajectory)->Arg(16)->Arg(40)->Arg(128);

static void ScoreNetEval(benchmark::State& state) {
    ScoreNetConfig cfg;
    cfg.d = 3;
    cfg.width = static_cast<int>(state.range(0));
    ScoreNetwork net(cfg);
    Rng rng(5);
    net.init(rng);
    Tensor z({3, 16, 16}), z_d({3, 16, 16});
    rng.fill_normal(z);
    rng.fill_normal(z_d);
    for (auto _ : state) {
        Tensor s = net.score(z, z_d, 0.7f);
        benchmark::DoNotOptimize(s.data());
    }
}
BENCHMARK(ScoreNetEval)->Arg(16)->Arg(32)->Arg(64);
