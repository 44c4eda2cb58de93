#include <benchmark/benchmark.h>

#include "rpom/fom.hpp"

using namespace rpom;

namespace {

void BM_PressureSolve(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    fom::Scenario sc = fom::Scenario::heated_side(n, n);
    fom::SolverParams params;
    Field t(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) t(i, j) = sc.grid.yc(j) * (1.0 - sc.grid.xc(i));
    Field ra = fom::rayleigh_field(sc, 40.0, 40.0);
    for (auto _ : state) {
        Field p = fom::solve_pressure(t, ra, sc, params);
        benchmark::DoNotOptimize(p.v.data());
    }
}
BENCHMARK(BM_PressureSolve)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TemperatureStep(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    fom::Scenario sc = fom::Scenario::heated_side(n, n);
    fom::SolverParams params;
    Field t(n, n, 0.0);
    Field ra = fom::rayleigh_field(sc, 40.0, 40.0);
    Field p = fom::solve_pressure(t, ra, sc, params);
    FaceVelocity vel = fom::compute_velocity(p, t, ra, sc);
    std::vector<Field> hist{t, t};
    for (auto _ : state) {
        Field next = fom::advance_temperature(hist, vel, sc, 5e-4, 2, 0.0);
        benchmark::DoNotOptimize(next.v.data());
    }
}
BENCHMARK(BM_TemperatureStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_HeatedSideTrajectory(benchmark::State& state) {
    fom::Scenario sc = fom::Scenario::heated_side(16, 16);
    fom::SolverParams params;
    params.t_end = 2e-3;
    params.dt0 = 2e-4;
    params.dt_max = 5e-4;
    std::vector<double> mu{40.0};
    for (auto _ : state) {
        fom::Trajectory traj = fom::run_simulation(sc, params, mu);
        benchmark::DoNotOptimize(traj.timestamps.data());
    }
}
BENCHMARK(BM_HeatedSideTrajectory)->Unit(benchmark::kMillisecond);

} // namespace
