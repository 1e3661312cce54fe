// Microbenchmarks for the hot paths: 3D FFT, k-space downsampling, the
// conv/upsample layers, and full-volume patch stitching.

#include "flow4dsr/fft.hpp"
#include "flow4dsr/infer.hpp"
#include "flow4dsr/kspace.hpp"
#include "flow4dsr/layers.hpp"
#include "flow4dsr/net.hpp"
#include "flow4dsr/rng.hpp"

#include <benchmark/benchmark.h>

using namespace flow4dsr;

namespace {

Volume<cplx> random_complex(Vec3i dims, std::uint64_t seed) {
    Volume<cplx> v(dims);
    Rng rng(seed);
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    return v;
}

void BM_fft3(benchmark::State& state) {
    const int n = int(state.range(0));
    Volume<cplx> vol = random_complex({n, n, n}, 1);
    for (auto _ : state) {
        auto ks = fft3(vol);
        benchmark::DoNotOptimize(ks.data());
    }
    state.SetItemsProcessed(state.iterations() * vol.size());
}
BENCHMARK(BM_fft3)->Arg(32)->Arg(48)->Arg(64);

void BM_downsample_with_noise(benchmark::State& state) {
    const int n = int(state.range(0));
    ComplexVolume vol{Grid3({n, n, n}, 0.594), random_complex({n, n, n}, 2)};
    NoiseSpec noise{15.0, 7};
    for (auto _ : state) {
        auto lr = downsample_with_noise(vol, noise);
        benchmark::DoNotOptimize(lr.data.data());
    }
}
BENCHMARK(BM_downsample_with_noise)->Arg(32)->Arg(64);

void BM_conv3d_forward(benchmark::State& state) {
    const int c = int(state.range(0));
    const int n = int(state.range(1));
    Tensor<float> x({1, c, n, n, n});
    Rng rng(3);
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    std::vector<float> w(std::size_t(c) * c * 27), b(std::size_t(c), 0.f);
    for (auto& v : w) v = float(rng.uniform(-0.1, 0.1));
    Tensor<float> y;
    for (auto _ : state) {
        conv3d_forward(x, w.data(), b.data(), c, y);
        benchmark::DoNotOptimize(y.data.data());
    }
    const double flops = 2.0 * c * c * 27.0 * n * n * n;
    state.counters["GFLOP/s"] =
        benchmark::Counter(flops * double(state.iterations()) / 1e9, benchmark::Counter::kIsRate);
}
BENCHMARK(BM_conv3d_forward)->Args({16, 16})->Args({16, 32})->Args({64, 16});

void BM_upsample_trilinear2x(benchmark::State& state) {
    const int n = int(state.range(0));
    Tensor<float> x({1, 16, n, n, n});
    Rng rng(4);
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    for (auto _ : state) {
        auto y = upsample_trilinear2x(x);
        benchmark::DoNotOptimize(y.data.data());
    }
}
BENCHMARK(BM_upsample_trilinear2x)->Arg(16)->Arg(32);

void BM_stitch_trilinear_oracle(benchmark::State& state) {
    const int n = int(state.range(0));
    Grid3 grid({n, n, n}, 1.188);
    std::array<VolumeD, 3> vel, mag;
    Rng rng(5);
    for (int c = 0; c < 3; ++c) {
        vel[std::size_t(c)] = VolumeD(grid.dims);
        mag[std::size_t(c)] = VolumeD(grid.dims);
        for (std::int64_t i = 0; i < vel[std::size_t(c)].size(); ++i) {
            vel[std::size_t(c)][i] = rng.uniform(-50, 50);
            mag[std::size_t(c)][i] = rng.uniform(0, 240);
        }
    }
    PatchPlan plan = plan_patches(grid.dims, 16);
    auto oracle = trilinear_oracle_predictor();
    for (auto _ : state) {
        auto sr = predict_volume(vel, mag, {100, 100, 100}, grid, oracle, plan);
        benchmark::DoNotOptimize(sr.field.v[0].data());
    }
}
BENCHMARK(BM_stitch_trilinear_oracle)->Arg(32)->Arg(64);

} // namespace

BENCHMARK_MAIN();
