#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "rpom/rom.hpp"

using namespace rpom;

namespace {

store::SnapshotSet tiny_fom_set(int nx, int ny, std::uint64_t seed, double t_end = 2e-3) {
    store::DatasetSpec spec;
    spec.m_train = 3;
    spec.m_validation = 1;
    spec.m_test = 1;
    spec.mu_ranges = {{40.0, 80.0, false}};
    spec.seed = seed;

    fom::Scenario sc = fom::Scenario::heated_side(nx, ny);
    fom::SolverParams params;
    params.t_end = t_end;
    params.dt0 = 2e-4;
    params.dt_max = 5e-4;

    auto plan = store::plan_parameter_samples(spec);
    std::vector<fom::Trajectory> runs;
    for (const auto& mu : plan.mu) runs.push_back(fom::run_simulation(sc, params, mu));
    return store::split_set(std::move(runs), spec);
}

// Linear model with one constant mode and an affine regressor; predictions
// are exactly b0 + w_t * t_scaled in theta space, so metric inputs are fully
// controlled.
rom::RomModel constant_mode_model(const Grid& grid, double theta_bias, double theta_slope) {
    rom::RomModel model;
    model.kind = rom::RomKind::linear;
    model.name = "POD 1 RB";
    model.grid = grid;
    model.input_scaling.lo = {0.0, 0.0};
    model.input_scaling.hi = {1.0, 1.0};
    model.input_scaling.log10 = {0, 0};
    model.target_scaling.lo = {0.0};
    model.target_scaling.hi = {1.0};
    model.target_scaling.log10 = {0};
    model.field_lo = 0.0;
    model.field_hi = 1.0;

    pod::ReducedBasis basis;
    basis.weight = grid.cell_area();
    double mode_value = 1.0 / std::sqrt(basis.weight * grid.cells());
    basis.modes = linalg::DenseMatrix(grid.cells(), 1, mode_value);
    basis.singular_values = {1.0};
    basis.n_int = 1;
    model.basis = std::move(basis);

    Rng rng(0);
    neural::Mlp reg = neural::Mlp::create(2, 1, 0, 1, rng);
    reg.set_parameter(0, theta_slope);  // weight on t_scaled
    reg.set_parameter(1, 0.0);          // weight on mu
    reg.set_parameter(2, theta_bias);   // bias
    model.regressor = std::move(reg);
    return model;
}

fom::Trajectory constant_trajectory(const Grid& grid, std::vector<double> timestamps,
                                    double value) {
    fom::Trajectory traj;
    traj.grid = grid;
    traj.mu = {0.5};
    traj.timestamps = std::move(timestamps);
    for (std::size_t k = 0; k < traj.timestamps.size(); ++k)
        traj.temperature.emplace_back(grid.nx, grid.ny, value);
    return traj;
}

} // namespace

TEST_CASE("moving_average_mse closed forms") {
    std::vector<double> constant(20, 3.5);
    auto avg = rom::moving_average_mse(constant, 50);
    for (double v : avg) CHECK(v == doctest::Approx(3.5).epsilon(1e-15));

    std::vector<double> ramp;
    for (int k = 1; k <= 100; ++k) ramp.push_back(k);
    auto w1 = rom::moving_average_mse(ramp, 1);
    CHECK(w1 == ramp);

    auto w50 = rom::moving_average_mse(ramp, 50);
    CHECK(w50.back() == doctest::Approx(75.5));  // mean(51..100)
    CHECK(w50.front() == doctest::Approx(1.0));

    CHECK_THROWS_AS(rom::moving_average_mse(std::vector<double>{}, 5), Error);
}

TEST_CASE("diff_field closed forms and random oracle") {
    Field a(4, 4, 1.0), b(4, 4, 1.0);
    auto zero = rom::diff_field(a, b);
    for (double v : zero.v) CHECK(v == 0.0);

    Field c(4, 4, 1.0), d(4, 4, 3.5);
    auto offset = rom::diff_field(c, d);
    for (double v : offset.v) CHECK(v == doctest::Approx(2.5));

    Rng rng(1);
    Field x(4, 4), y(4, 4);
    for (double& v : x.v) v = rng.uniform(-2, 2);
    for (double& v : y.v) v = rng.uniform(-2, 2);
    auto diff = rom::diff_field(x, y);
    for (std::size_t k = 0; k < diff.v.size(); ++k)
        CHECK(diff.v[k] == doctest::Approx(std::abs(x.v[k] - y.v[k])));

    Field wrong(5, 4, 0.0);
    CHECK_THROWS_AS(rom::diff_field(a, wrong), Error);
}

TEST_CASE("trajectory_metrics closed forms with a hand-built model") {
    Grid grid{4, 4, 1.0, 1.0};

    // perfect model: predicts the constant field 0.6 at every t
    double mode_value = 1.0 / std::sqrt(grid.cell_area() * grid.cells());
    double theta_for_06 = 0.6 / mode_value;
    rom::RomModel perfect = constant_mode_model(grid, theta_for_06, 0.0);
    fom::Trajectory traj = constant_trajectory(grid, {0.0, 0.5, 1.0}, 0.6);
    auto m0 = rom::trajectory_metrics(perfect, traj);
    CHECK(m0.mse == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(m0.max_diff == doctest::Approx(0.0).epsilon(1e-15));

    // constant offset c = 0.25 over all steps and DOFs
    rom::RomModel offset = constant_mode_model(grid, (0.6 + 0.25) / mode_value, 0.0);
    auto m1 = rom::trajectory_metrics(offset, traj);
    CHECK(m1.mse == doctest::Approx(0.25 * 0.25).epsilon(1e-12));
    CHECK(m1.max_diff == doctest::Approx(0.25).epsilon(1e-12));

    // two-step toy: errors e1 = 0.1 at t=0, e2 = -0.3 at t=1 (slope through
    // theta space); hand computation of Eq.-23-style means
    fom::Trajectory toy = constant_trajectory(grid, {0.0, 1.0}, 0.6);
    double theta_e1 = (0.6 + 0.1) / mode_value;
    double theta_e2 = (0.6 - 0.3) / mode_value;
    rom::RomModel slope = constant_mode_model(grid, theta_e1, theta_e2 - theta_e1);
    auto m2 = rom::trajectory_metrics(slope, toy);
    CHECK(m2.per_step_mse[0] == doctest::Approx(0.01).epsilon(1e-10));
    CHECK(m2.per_step_mse[1] == doctest::Approx(0.09).epsilon(1e-10));
    CHECK(m2.mse == doctest::Approx(0.05).epsilon(1e-10));
    CHECK(m2.max_diff == doctest::Approx(0.3).epsilon(1e-10));
}

TEST_CASE("metrics are invariant under test-set order permutation") {
    Grid grid{4, 4, 1.0, 1.0};
    double mode_value = 1.0 / std::sqrt(grid.cell_area() * grid.cells());
    rom::RomModel model = constant_mode_model(grid, 0.5 / mode_value, 0.0);

    fom::Trajectory a = constant_trajectory(grid, {0.0, 1.0}, 0.4);
    fom::Trajectory b = constant_trajectory(grid, {0.0, 0.5, 1.0}, 0.7);

    auto ma = rom::trajectory_metrics(model, a);
    auto mb = rom::trajectory_metrics(model, b);
    auto ma2 = rom::trajectory_metrics(model, a);  // evaluated after b
    CHECK(ma.mse == ma2.mse);
    CHECK(ma.max_diff == ma2.max_diff);
    CHECK(mb.mse == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("linear ROM pipeline on a tiny heated-side set") {
    store::SnapshotSet set = tiny_fom_set(8, 8, 100);

    neural::TrainConfig cfg;
    cfg.epochs = 400;
    cfg.eta_max = 5e-3;
    cfg.batch_size = 16;
    cfg.seed = 7;

    rom::RomModel model = rom::build_linear_rom(set, 3, 3, cfg);
    CHECK(model.name == "POD 3 RB");

    // triangle inequality at a training point: total <= projection + regression
    const auto& run = set.runs[set.indices_of(store::Split::train)[0]];
    std::size_t k = run.steps() / 2;
    auto pred = rom::predict_field(model, run.timestamps[k], run.mu);
    CHECK(!pred.extrapolated);

    const auto& basis = *model.basis;
    auto theta = pod::project_l2(basis, run.temperature[k].v);
    auto projected = pod::reconstruct_linear(basis, theta);

    double total = 0.0, proj_err = 0.0, reg_err = 0.0;
    for (std::size_t d = 0; d < projected.size(); ++d) {
        total += (pred.field.v[d] - run.temperature[k].v[d]) *
                 (pred.field.v[d] - run.temperature[k].v[d]);
        proj_err += (projected[d] - run.temperature[k].v[d]) *
                    (projected[d] - run.temperature[k].v[d]);
        reg_err += (pred.field.v[d] - projected[d]) * (pred.field.v[d] - projected[d]);
    }
    CHECK(std::sqrt(total) <= std::sqrt(proj_err) + std::sqrt(reg_err) + 1e-12);

    // determinism of the online query
    auto pred2 = rom::predict_field(model, run.timestamps[k], run.mu);
    CHECK(pred.field.v == pred2.field.v);

    // extrapolation outside the scaled box is flagged, not fatal
    auto outside = rom::predict_field(model, run.timestamps.back() * 3.0, run.mu);
    CHECK(outside.extrapolated);
    CHECK(outside.field.finite());
}

TEST_CASE("queries between training timestamps stay within the neighbour band") {
    store::SnapshotSet set = tiny_fom_set(8, 8, 600);
    neural::TrainConfig cfg;
    cfg.epochs = 200;
    cfg.eta_max = 3e-3;
    cfg.seed = 31;
    rom::RomModel model = rom::build_linear_rom(set, 3, 3, cfg);

    const auto& run = set.runs[set.indices_of(store::Split::train)[1]];
    for (std::size_t k = 1; k + 2 < run.steps(); k += 2) {
        double t0 = run.timestamps[k], t1 = run.timestamps[k + 1];
        auto a = rom::predict_field(model, t0, run.mu);
        auto b = rom::predict_field(model, t1, run.mu);
        auto mid = rom::predict_field(model, 0.5 * (t0 + t1), run.mu);
        CHECK(!mid.extrapolated);
        for (std::size_t d = 0; d < mid.field.v.size(); ++d) {
            double lo = std::min(a.field.v[d], b.field.v[d]);
            double hi = std::max(a.field.v[d], b.field.v[d]);
            double spread = hi - lo + 1e-9;
            CHECK(mid.field.v[d] >= lo - spread);
            CHECK(mid.field.v[d] <= hi + spread);
        }
    }
}

TEST_CASE("nonlinear ROM with linear-RBF reproduces AE round trips at training points") {
    store::SnapshotSet set = tiny_fom_set(16, 16, 200);

    neural::ConvAeSpec spec;
    spec.side = 16;
    spec.hidden = 2;
    spec.latent = 2;
    spec.dropout_blocks = 0;

    neural::TrainConfig ae_cfg;
    ae_cfg.epochs = 15;
    ae_cfg.batch_size = 16;
    ae_cfg.eta_max = 1e-3;
    ae_cfg.schedule = neural::LrSchedule::cosine;
    ae_cfg.eta_min = 1e-8;
    ae_cfg.seed = 9;

    neural::TrainConfig approx_cfg;  // unused by the RBF path
    approx_cfg.seed = 9;

    rom::RomModel model = rom::build_nonlinear_rom(set, spec, rom::ApproximatorKind::rbf_linear,
                                                   ae_cfg, approx_cfg);
    CHECK(model.name == "AE 2 z: L-RBF");

    for (std::size_t i : set.indices_of(store::Split::train)) {
        const auto& run = set.runs[i];
        for (std::size_t k = 0; k < run.steps(); k += 3) {
            auto pred = rom::predict_field(model, run.timestamps[k], run.mu);

            auto normalized = store::normalize(run.temperature[k].v, set.temp_lo, set.temp_hi);
            auto round_trip = model.conv_ae->decode_one(model.conv_ae->encode_one(normalized));
            auto expected = store::denormalize(round_trip, set.temp_lo, set.temp_hi);
            CHECK(oracles::max_abs_diff(pred.field.v, expected) < 1e-6);
        }
    }
}

TEST_CASE("the three approximators are hot-swappable on one trained AE") {
    store::SnapshotSet set = tiny_fom_set(16, 16, 300);

    neural::ConvAeSpec spec;
    spec.side = 16;
    spec.hidden = 2;
    spec.latent = 2;
    spec.dropout_blocks = 0;

    neural::TrainConfig ae_cfg;
    ae_cfg.epochs = 8;
    ae_cfg.batch_size = 16;
    ae_cfg.eta_max = 1e-3;
    ae_cfg.seed = 11;

    neural::TrainConfig approx_cfg;
    approx_cfg.epochs = 25;
    approx_cfg.eta_max = 5e-3;
    approx_cfg.seed = 11;

    rom::RomModel base = rom::build_nonlinear_rom(set, spec, rom::ApproximatorKind::rbf_linear,
                                                  ae_cfg, approx_cfg);
    rom::RomModel cubic = rom::swap_approximator(base, set, rom::ApproximatorKind::rbf_cubic,
                                                 approx_cfg);
    rom::RomModel ann = rom::swap_approximator(base, set, rom::ApproximatorKind::ann, approx_cfg);

    // same decoder and same z targets: encode_split agrees across the three
    auto z1 = rom::encode_split(base, set, store::Split::train);
    auto z2 = rom::encode_split(cubic, set, store::Split::train);
    auto z3 = rom::encode_split(ann, set, store::Split::train);
    CHECK(z1 == z2);
    CHECK(z1 == z3);
    CHECK(cubic.name == "AE 2 z: C-RBF");
    CHECK(ann.name == "AE 2 z: ANN");

    // all three answer queries
    const auto& run = set.runs[set.indices_of(store::Split::test)[0]];
    for (const rom::RomModel* m : {&base, &cubic, &ann})
        CHECK(rom::predict_field(*m, run.timestamps.front(), run.mu).field.finite());
}

TEST_CASE("model bundle round-trips through the directory format") {
    store::SnapshotSet set = tiny_fom_set(8, 8, 400);
    neural::TrainConfig cfg;
    cfg.epochs = 30;
    cfg.eta_max = 2e-3;
    cfg.seed = 17;
    rom::RomModel model = rom::build_linear_rom(set, 2, 2, cfg);

    auto dir = std::filesystem::temp_directory_path() / "rpom_bundle_test";
    std::filesystem::remove_all(dir);
    model.save(dir);
    rom::RomModel back = rom::RomModel::load(dir);

    CHECK(back.name == model.name);
    const auto& run = set.runs[0];
    auto p1 = rom::predict_field(model, run.timestamps.back(), run.mu);
    auto p2 = rom::predict_field(back, run.timestamps.back(), run.mu);
    CHECK(p1.field.v == p2.field.v);
}

TEST_CASE("speedup: a single ROM query beats the FOM trajectory") {
    store::SnapshotSet set = tiny_fom_set(16, 16, 500, /*t_end=*/4e-3);
    neural::TrainConfig cfg;
    cfg.epochs = 20;
    cfg.eta_max = 2e-3;
    cfg.seed = 23;
    rom::RomModel model = rom::build_linear_rom(set, 2, 2, cfg);

    fom::Scenario sc = fom::Scenario::heated_side(16, 16);
    fom::SolverParams params;
    params.t_end = 4e-3;
    params.dt0 = 2e-4;
    params.dt_max = 5e-4;

    auto report = rom::benchmark_speedup(model, sc, params, std::vector<double>{60.0});
    CHECK(report.ratio_single() > 1.0);
    CHECK(report.ratio_single() >= report.ratio_replay());
    CHECK(report.fom_steps > 0);

    std::string csv = report.csv();
    CHECK(csv.find("speedup_single_query") != std::string::npos);
}
