// Serial reference vs OpenMP kernels, plus one training step at toy scale.
#include <benchmark/benchmark.h>

#include <cmath>

#include "sam/kernels.hpp"
#include "sam/random.hpp"
#include "sam/training.hpp"

using namespace sam;

namespace {

Matrix random_matrix(RandomSource& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
    return m;
}

template <auto Fn>
void bm_matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RandomSource rng(1);
    const Matrix a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
    for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <auto Fn>
void bm_sinkhorn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RandomSource rng(2);
    const Matrix z = random_matrix(rng, n + 1, n + 1);
    std::vector<double> la(n + 1, 0.0), lb(n + 1, 0.0);
    la.back() = lb.back() = std::log(static_cast<double>(n));
    for (auto _ : state) benchmark::DoNotOptimize(Fn(z, la, lb, 100, nullptr));
}

template <auto Forward, auto Backward>
void bm_sinkhorn_backward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    RandomSource rng(3);
    const Matrix z = random_matrix(rng, n + 1, n + 1), g = random_matrix(rng, n + 1, n + 1);
    std::vector<double> la(n + 1, 0.0), lb(n + 1, 0.0);
    la.back() = lb.back() = std::log(static_cast<double>(n));
    kernels::SinkhornTrace trace;
    (void)Forward(z, la, lb, 100, &trace);
    for (auto _ : state) benchmark::DoNotOptimize(Backward(z, trace, la, lb, g));
}

void bm_pair_step(benchmark::State& state) {
    const Model model(ModelConfig::toy(), 0);
    SynthConfig sc;
    sc.num_keypoints = static_cast<std::size_t>(state.range(0));
    RandomSource rng(4);
    const FeaturePair pair = generate_pair(rng, sc);
    const GroundTruth gt = compute_ground_truth(pair);
    for (auto _ : state) benchmark::DoNotOptimize(pair_step(model, pair, gt, 1.0, 5));
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_sinkhorn<kernels::serial::log_sinkhorn>)->Name("sinkhorn/serial")->Arg(64)->Arg(512);
BENCHMARK(bm_sinkhorn<kernels::parallel::log_sinkhorn>)->Name("sinkhorn/parallel")->Arg(64)->Arg(512);
BENCHMARK(bm_sinkhorn_backward<kernels::serial::log_sinkhorn, kernels::serial::log_sinkhorn_backward>)
    ->Name("sinkhorn_backward/serial")
    ->Arg(64)
    ->Arg(512);
BENCHMARK(bm_sinkhorn_backward<kernels::parallel::log_sinkhorn, kernels::parallel::log_sinkhorn_backward>)
    ->Name("sinkhorn_backward/parallel")
    ->Arg(64)
    ->Arg(512);
BENCHMARK(bm_pair_step)->Name("pair_step/toy")->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
