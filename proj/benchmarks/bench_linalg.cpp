#include <benchmark/benchmark.h>

#include "rpom/linalg.hpp"
#include "rpom/rng.hpp"

using namespace rpom;

namespace {

linalg::DenseMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    linalg::DenseMatrix m(rows, cols);
    for (double& v : m.a) v = rng.uniform(-1.0, 1.0);
    return m;
}

void BM_ThinSvdSnapshot(benchmark::State& state) {
    auto a = random_matrix(1024, static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) {
        auto svd = linalg::thin_svd(a);
        benchmark::DoNotOptimize(svd.sigma.data());
    }
}
BENCHMARK(BM_ThinSvdSnapshot)->Arg(8)->Arg(16)->Arg(32);

void BM_SolveSpd(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    auto m = random_matrix(n, n, 2);
    auto a = linalg::matmul(linalg::transpose(m), m);
    for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
    Rng rng(3);
    std::vector<double> b(n);
    for (double& v : b) v = rng.uniform(-1, 1);
    for (auto _ : state) {
        auto x = linalg::solve_spd(a, b);
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(BM_SolveSpd)->Arg(32)->Arg(128);

} // namespace
