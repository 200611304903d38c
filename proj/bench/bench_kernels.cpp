// Blocked parallel top-K' against the serial full-row reference, plus dense
// search. Run with --benchmark_counters_tabular=true for a compact table.
#include <benchmark/benchmark.h>
#include <omp.h>
#include <spdlog/spdlog.h>

#include "codemine/ranker.hpp"
#include "codemine/simgraph.hpp"

using namespace codemine;

namespace {

VectorStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed, Side side) {
    VectorStore s(dim, side);
    Rng rng(seed);
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : v) x = static_cast<float>(rng.normal());
        s.append(fmt::format("p{:06}", i), v);
    }
    return s;
}

constexpr std::size_t kDim = 256;
constexpr std::size_t kKPrime = 128;

void BM_compute_neighbors(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const int threads = static_cast<int>(state.range(1));
    const auto texts = random_store(n, kDim, 1, Side::text);
    const auto codes = random_store(n, kDim, 2, Side::code);
    omp_set_num_threads(threads);
    for (auto _ : state) benchmark::DoNotOptimize(compute_neighbors(texts, codes, {kKPrime, 64, 1}));
    state.counters["pairs/s"] = benchmark::Counter(double(n) * double(n), benchmark::Counter::kIsIterationInvariantRate);
    state.counters["threads"] = threads;
}

void BM_brute_force_neighbors(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto texts = random_store(n, kDim, 1, Side::text);
    const auto codes = random_store(n, kDim, 2, Side::code);
    for (auto _ : state) benchmark::DoNotOptimize(brute_force_neighbors(texts, codes, kKPrime));
    state.counters["pairs/s"] = benchmark::Counter(double(n) * double(n), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_search(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto index = random_store(n, kDim, 3, Side::code);
    const auto queries = random_store(64, kDim, 4, Side::text);
    for (auto _ : state) benchmark::DoNotOptimize(search_batch(index, queries, 100));
    state.counters["queries/s"] = benchmark::Counter(64, benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(BM_compute_neighbors)
    ->ArgsProduct({{1000, 4000}, {1, 4}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();
BENCHMARK(BM_brute_force_neighbors)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_search)->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond)->UseRealTime();

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
