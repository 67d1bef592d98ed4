// Analytic penalty (serial reference and OpenMP) against the finite-difference
// baseline, plus the registration similarity term.
#include <benchmark/benchmark.h>

#include "bsreg/analytic_penalty.hpp"
#include "bsreg/numeric_penalty.hpp"
#include "bsreg/registration.hpp"
#include "bsreg/synthetic.hpp"

using namespace bsreg;

namespace {

// 128^3 voxels of 1 mm covered by tiles of `tile` voxels.
ControlPointGrid grid_for(int tile)
{
    const int n = 128 / tile;
    return random_grid(GridGeometry({n, n, n}, {double(tile), double(tile), double(tile)}, {0, 0, 0}), 1.0, 7);
}

RegularizerWeights weights_for(int which)
{
    return which < 5 ? RegularizerWeights::only(static_cast<Regularizer>(which)) : RegularizerWeights::all();
}

void label(benchmark::State& state, int which) { state.SetLabel(which < 5 ? kRegularizerNames[which] : "all"); }

void BM_AnalyticSerial(benchmark::State& state)
{
    const auto grid = grid_for(static_cast<int>(state.range(0)));
    const VMatrixBank bank(grid.geometry.spacing());
    const auto w = weights_for(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(penalty(grid, w, bank).value);
    label(state, static_cast<int>(state.range(1)));
}

void BM_AnalyticParallel(benchmark::State& state)
{
    const auto grid = grid_for(static_cast<int>(state.range(0)));
    const VMatrixBank bank(grid.geometry.spacing());
    const auto w = weights_for(static_cast<int>(state.range(1)));
    const int threads = static_cast<int>(state.range(2));
    for (auto _ : state) benchmark::DoNotOptimize(penalty_parallel(grid, w, bank, threads).value);
    label(state, static_cast<int>(state.range(1)));
}

void BM_FiniteDifference(benchmark::State& state)
{
    const auto grid = grid_for(static_cast<int>(state.range(0)));
    const auto w = weights_for(static_cast<int>(state.range(1)));
    const int threads = static_cast<int>(state.range(2));
    const auto spec = SamplingSpec::voxels({1, 1, 1});
    for (auto _ : state) benchmark::DoNotOptimize(fd_penalty(grid, w, spec, threads).value);
    label(state, static_cast<int>(state.range(1)));
}

void BM_VBank(benchmark::State& state)
{
    for (auto _ : state) benchmark::DoNotOptimize(VMatrixBank({16, 16, 16}).size());
}

void BM_MseCostGradient(benchmark::State& state)
{
    const Volume fixed = make_phantom(PhantomKind::blobs, {64, 64, 64}, {2, 2, 2}, 1);
    const Volume moving = make_phantom(PhantomKind::blobs, {64, 64, 64}, {2, 2, 2}, 2);
    const ControlPointGrid grid = random_grid(grid_for_volume(fixed, {8, 8, 8}), 1.0, 3);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(mse_cost_grad(fixed, moving, grid, threads).value);
}

// Args: tile size in voxels, regularizer (0..4, 5 = all), threads.
BENCHMARK(BM_AnalyticSerial)->ArgsProduct({{8, 16, 32}, {1, 3, 5}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AnalyticParallel)->ArgsProduct({{8, 16}, {5}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FiniteDifference)->ArgsProduct({{16}, {1, 3, 5}, {1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FiniteDifference)->ArgsProduct({{16}, {5}, {2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_VBank)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MseCostGradient)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
