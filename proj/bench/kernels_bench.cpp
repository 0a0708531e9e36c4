#include "klfuse/density.hpp"
#include "klfuse/harness.hpp"
#include "klfuse/kernels.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <map>

using namespace klfuse;

namespace {

struct Fixture {
    Model model;
    RowMatrix rows;
    Vector weights;
    RowMatrix resp;
};

const Fixture& fixture(Eigen::Index n) {
    static std::map<Eigen::Index, Fixture> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        Model m = generate_true_model({Family::Gmm, 3, 3, 0, std::nullopt}, 1);
        RowMatrix rows = sample(m, n, 2).rows();
        Vector w = Vector::Ones(n);
        RowMatrix resp = kernels::serial::e_step(m, rows, w).responsibilities;
        it = cache.emplace(n, Fixture{std::move(m), std::move(rows), std::move(w), std::move(resp)}).first;
    }
    return it->second;
}

void set_threads(benchmark::State& state) { omp_set_num_threads(static_cast<int>(state.range(1))); }

void BM_LogDensitySerial(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::log_density_rows(f.model, f.rows));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LogDensityParallel(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    set_threads(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::log_density_rows(f.model, f.rows));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EStepSerial(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::e_step(f.model, f.rows, f.weights));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EStepParallel(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    set_threads(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::e_step(f.model, f.rows, f.weights));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ComponentStatsSerial(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::component_stats(f.rows, f.weights, f.resp));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ComponentStatsParallel(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    set_threads(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::component_stats(f.rows, f.weights, f.resp));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreOuterSerial(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::score_outer_sum(f.model, f.rows));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreOuterParallel(benchmark::State& state) {
    const auto& f = fixture(state.range(0));
    set_threads(state);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::score_outer_sum(f.model, f.rows));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void serial_args(benchmark::internal::Benchmark* b) {
    for (long n : {10000, 100000}) b->Args({n});
}

void parallel_args(benchmark::internal::Benchmark* b) {
    const int max = omp_get_max_threads();
    for (long n : {10000, 100000})
        for (int t = 1; t <= max; t *= 2) b->Args({n, t});
    b->UseRealTime();
}

}  // namespace

BENCHMARK(BM_LogDensitySerial)->Apply(serial_args);
BENCHMARK(BM_LogDensityParallel)->Apply(parallel_args);
BENCHMARK(BM_EStepSerial)->Apply(serial_args);
BENCHMARK(BM_EStepParallel)->Apply(parallel_args);
BENCHMARK(BM_ComponentStatsSerial)->Apply(serial_args);
BENCHMARK(BM_ComponentStatsParallel)->Apply(parallel_args);
BENCHMARK(BM_ScoreOuterSerial)->Apply(serial_args);
BENCHMARK(BM_ScoreOuterParallel)->Apply(parallel_args);

BENCHMARK_MAIN();
