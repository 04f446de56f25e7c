#include "mhd/kernels.hpp"
#include "mhd/rng.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using mhd::Matrix;
using mhd::kernels::Backend;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    mhd::Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.data) v = n(rng);
    return m;
}

void BM_Matmul(benchmark::State& state) {
    const auto backend = static_cast<Backend>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    const std::vector<double> bias(n, 0.5);
    Matrix out(n, n);
    for (auto _ : state) {
        mhd::kernels::matmul(backend, a, b, bias, out);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void BM_MatmulTN(benchmark::State& state) {
    const auto backend = static_cast<Backend>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const Matrix a = random_matrix(n, n, 3), b = random_matrix(n, n, 4);
    Matrix out(n, n);
    for (auto _ : state) {
        mhd::kernels::matmul_tn_accumulate(backend, a, b, out);
        benchmark::DoNotOptimize(out.data.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

void BM_Softmax(benchmark::State& state) {
    const auto backend = static_cast<Backend>(state.range(0));
    const auto rows = static_cast<std::size_t>(state.range(1));
    const Matrix logits = random_matrix(rows, 20, 5);
    Matrix probs(rows, 20);
    for (auto _ : state) {
        mhd::kernels::softmax_rows(backend, logits, probs);
        benchmark::DoNotOptimize(probs.data.data());
    }
}

void args(benchmark::internal::Benchmark* b) {
    for (int backend : {0, 1})
        for (int n : {64, 256}) b->Args({backend, n});
}

}  // namespace

BENCHMARK(BM_Matmul)->Apply(args)->ArgNames({"parallel", "n"});
BENCHMARK(BM_MatmulTN)->Apply(args)->ArgNames({"parallel", "n"});
BENCHMARK(BM_Softmax)->Args({0, 4096})->Args({1, 4096})->ArgNames({"parallel", "rows"});

BENCHMARK_MAIN();
