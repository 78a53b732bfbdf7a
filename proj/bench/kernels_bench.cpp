// Serial reference vs OpenMP variants of the data-parallel kernels.

#include <cosp/kernels.hpp>
#include <cosp/stereo.hpp>
#include <cosp/synth.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace cosp;

namespace
{

RasterGrid noise(int w, int h, uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 255.0);
    RasterGrid g(w, h);
    for (float &v : g.values())
        v = static_cast<float>(u(rng));
    return g;
}

Exec exec_of(const benchmark::State &st) { return st.range(0) ? Exec::Parallel : Exec::Serial; }

const SyntheticScene &scene()
{
    static const SyntheticScene s = [] {
        SceneConfig c;
        c.width_px = 400;
        c.height_px = 300;
        return make_stereo_scene(c, 3);
    }();
    return s;
}

void BM_Census(benchmark::State &st)
{
    const RasterGrid img = noise(1024, 768, 1);
    for (auto _ : st)
        benchmark::DoNotOptimize(kernels::census7x7(img, exec_of(st)));
}

void BM_CensusCost(benchmark::State &st)
{
    const auto a = kernels::census7x7(noise(512, 384, 2)), b = kernels::census7x7(noise(512, 384, 3));
    for (auto _ : st)
        benchmark::DoNotOptimize(kernels::census_cost(a, b, -32, 31, exec_of(st)));
}

void BM_SgmAggregate(benchmark::State &st)
{
    const auto a = kernels::census7x7(noise(320, 240, 4)), b = kernels::census7x7(noise(320, 240, 5));
    const auto c = kernels::census_cost(a, b, -24, 23);
    for (auto _ : st)
        benchmark::DoNotOptimize(st.range(0) ? kernels::sgm_aggregate(c, 10, 120) : kernels::serial::sgm_aggregate(c, 10, 120));
}

void BM_Render(benchmark::State &st)
{
    for (auto _ : st)
        benchmark::DoNotOptimize(render_image(scene(), scene().fore.camera, exec_of(st)));
}

void BM_ResampleRectified(benchmark::State &st)
{
    const SyntheticScene &s = scene();
    static const RectificationModel m = build_rectification(s.fore.camera, s.aft.camera, {950.0, 1200.0});
    static const RasterGrid img = render_image(s, s.fore.camera);
    for (auto _ : st)
        benchmark::DoNotOptimize(resample_rectified(img, m, 0, exec_of(st)));
}

} // namespace

BENCHMARK(BM_Census)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CensusCost)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SgmAggregate)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Render)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ResampleRectified)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
