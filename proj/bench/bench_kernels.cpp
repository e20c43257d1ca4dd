// Serial reference vs blocked/fused kernels. Thread count comes from
// FLOWMATCH_THREADS (or OMP_NUM_THREADS); the Threads/N variants pin it explicitly.
#include <random>

#include <benchmark/benchmark.h>

#include "flowmatch/matcher.hpp"
#include "flowmatch/parallel.hpp"
#include "flowmatch/propagation.hpp"
#include "flowmatch/reference.hpp"

using namespace flowmatch;

namespace {

Tensor random_features(std::size_t h, std::size_t w, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.f, 1.f);
    Tensor t({h, w, d});
    for (float& v : t.values()) v = g(rng);
    return t;
}

void BM_MatmulReference(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const TensorD a = tensor_cast<double>(random_features(n, n, 1, 1).reshaped({n, n}));
    const TensorD b = tensor_cast<double>(random_features(n, n, 1, 2).reshaped({n, n}));
    for (auto _ : state) benchmark::DoNotOptimize(reference::matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

void BM_MatmulBlocked(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_features(n, n, 1, 1).reshaped({n, n});
    const Tensor b = random_features(n, n, 1, 2).reshaped({n, n});
    parallel::ThreadScope scope(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(matmul_blocked(a, b, 64));
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

void BM_MatchReference(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const TensorD f1 = tensor_cast<double>(random_features(side, side, 64, 3));
    const TensorD f2 = tensor_cast<double>(random_features(side, side, 64, 4));
    for (auto _ : state) benchmark::DoNotOptimize(reference::match_flow(f1, f2));
}

void BM_MatchMaterialized(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const Tensor f1 = random_features(side, side, 64, 3);
    const Tensor f2 = random_features(side, side, 64, 4);
    parallel::ThreadScope scope(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(global_match(f1, f2).flow_raw);
}

void BM_MatchFused(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const Tensor f1 = random_features(side, side, 64, 3);
    const Tensor f2 = random_features(side, side, 64, 4);
    parallel::ThreadScope scope(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(match_flow(f1, f2));
}

void BM_PropagateReference(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const TensorD f1 = tensor_cast<double>(random_features(side, side, 64, 5));
    const TensorD flow = tensor_cast<double>(random_features(side, side, 2, 6));
    for (auto _ : state) benchmark::DoNotOptimize(reference::propagate(reference::self_affinity(f1), flow));
}

void BM_PropagateFused(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const Tensor f1 = random_features(side, side, 64, 5);
    const Tensor flow = random_features(side, side, 2, 6);
    parallel::ThreadScope scope(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(propagate_flow(f1, flow));
}

}  // namespace

BENCHMARK(BM_MatmulReference)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MatmulBlocked)->ArgsProduct({{128, 256}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MatchReference)->Arg(16)->Arg(24)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MatchMaterialized)->ArgsProduct({{16, 24, 48}, {1, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MatchFused)->ArgsProduct({{16, 24, 48}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PropagateReference)->Arg(16)->Arg(24)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PropagateFused)->ArgsProduct({{16, 24, 48}, {1, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
