#include <benchmark/benchmark.h>

#include <cmath>

#include "rpom/rom.hpp"

using namespace rpom;

namespace {

// Representative linear model: 1024 DOFs, 16 modes, 5x7 regressor.
rom::RomModel synthetic_linear_model() {
    Grid grid{32, 32, 1.0, 1.0};
    rom::RomModel model;
    model.kind = rom::RomKind::linear;
    model.name = "POD 16 RB";
    model.grid = grid;
    model.input_scaling.lo = {0.0, 40.0};
    model.input_scaling.hi = {0.02, 80.0};
    model.input_scaling.log10 = {0, 0};
    model.target_scaling.lo.assign(16, 0.0);
    model.target_scaling.hi.assign(16, 1.0);
    model.target_scaling.log10.assign(16, 0);

    Rng rng(5);
    pod::ReducedBasis basis;
    basis.weight = grid.cell_area();
    basis.modes = linalg::DenseMatrix(grid.cells(), 16);
    for (double& v : basis.modes.a) v = rng.uniform(-1, 1);
    basis.singular_values.assign(16, 1.0);
    basis.n_int = 16;
    model.basis = std::move(basis);
    model.regressor = neural::Mlp::create(2, 16, 5, 7, rng);
    return model;
}

void BM_PredictFieldLinear(benchmark::State& state) {
    rom::RomModel model = synthetic_linear_model();
    std::vector<double> mu{60.0};
    double t = 0.01;
    for (auto _ : state) {
        auto out = rom::predict_field(model, t, mu);
        benchmark::DoNotOptimize(out.field.v.data());
    }
}
BENCHMARK(BM_PredictFieldLinear)->Unit(benchmark::kMicrosecond);

void BM_ProjectL2(benchmark::State& state) {
    rom::RomModel model = synthetic_linear_model();
    Rng rng(6);
    std::vector<double> field(model.grid.cells());
    for (double& v : field) v = rng.uniform(0, 1);
    for (auto _ : state) {
        auto theta = pod::project_l2(*model.basis, field);
        benchmark::DoNotOptimize(theta.data());
    }
}
BENCHMARK(BM_ProjectL2)->Unit(benchmark::kMicrosecond);

void BM_MovingAverage(benchmark::State& state) {
    std::vector<double> series(static_cast<std::size_t>(state.range(0)));
    for (std::size_t k = 0; k < series.size(); ++k) series[k] = std::sin(0.01 * k);
    for (auto _ : state) {
        auto avg = rom::moving_average_mse(series, 50);
        benchmark::DoNotOptimize(avg.data());
    }
}
BENCHMARK(BM_MovingAverage)->Arg(1000);

} // namespace
