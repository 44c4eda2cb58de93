#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "rpom/pod.hpp"
#include "rpom/rng.hpp"

using namespace rpom;

namespace {

// Hand-assembled snapshot set over a 4x4 grid (no FOM involved).
store::SnapshotSet make_set(const std::vector<std::vector<std::vector<double>>>& runs_fields,
                            double lx = 1.0, double ly = 1.0) {
    store::SnapshotSet set;
    set.grid = {4, 4, lx, ly};
    for (std::size_t r = 0; r < runs_fields.size(); ++r) {
        fom::Trajectory traj;
        traj.grid = set.grid;
        traj.mu = {double(r + 1)};
        for (std::size_t k = 0; k < runs_fields[r].size(); ++k) {
            traj.timestamps.push_back(0.1 * k);
            Field f(4, 4);
            f.v = runs_fields[r][k];
            traj.temperature.push_back(std::move(f));
        }
        set.runs.push_back(std::move(traj));
        set.splits.push_back(store::Split::train);
    }
    set.mu_log = {0};
    set.compute_bounds();
    return set;
}

std::vector<double> random_field(Rng& rng) {
    std::vector<double> v(16);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double weighted_dot(const store::SnapshotSet& set, std::span<const double> a,
                    std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * set.grid.cell_area();
}

} // namespace

TEST_CASE("single snapshot yields its own normalized mode") {
    Rng rng(1);
    auto f = random_field(rng);
    auto set = make_set({{f}});
    pod::ReducedBasis basis = pod::nested_pod(set, 1, 1);

    REQUIRE(basis.n_modes() == 1);
    auto mode = basis.modes.column(0);
    CHECK(weighted_dot(set, mode, mode) == doctest::Approx(1.0).epsilon(1e-12));

    // the mode is parallel to the snapshot
    double cross = 0.0, norm_f = 0.0, norm_m = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        cross += f[i] * mode[i];
        norm_f += f[i] * f[i];
        norm_m += mode[i] * mode[i];
    }
    CHECK(std::abs(cross) == doctest::Approx(std::sqrt(norm_f * norm_m)).epsilon(1e-10));
}

TEST_CASE("orthogonal snapshots span the same space as the modes") {
    std::vector<double> e1(16, 0.0), e2(16, 0.0);
    e1[3] = 2.0;
    e2[9] = 1.5;
    auto set = make_set({{e1}, {e2}});
    pod::ReducedBasis basis = pod::nested_pod(set, 1, 2);
    REQUIRE(basis.n_modes() == 2);

    // projector equality: projecting the snapshots loses nothing
    for (const auto& snap : {e1, e2}) {
        auto theta = pod::project_l2(basis, snap);
        auto rec = pod::reconstruct_linear(basis, theta);
        CHECK(oracles::max_abs_diff(rec, snap) < 1e-10);
    }
}

TEST_CASE("nested POD equals single-SVD POD when nothing is truncated") {
    Rng rng(12);
    std::vector<std::vector<double>> run1, run2;
    for (int k = 0; k < 3; ++k) run1.push_back(random_field(rng));
    for (int k = 0; k < 3; ++k) run2.push_back(random_field(rng));
    auto set = make_set({run1, run2});

    pod::ReducedBasis nested = pod::nested_pod(set, 3, 6);

    // oracle: plain SVD of all six snapshots at once
    linalg::DenseMatrix all(16, 6);
    int col = 0;
    for (const auto& run : {run1, run2})
        for (const auto& f : run) {
            for (int d = 0; d < 16; ++d) all(d, col) = f[d];
            ++col;
        }
    auto svd = linalg::thin_svd(all);

    // compare projection errors mode-count by mode-count
    for (std::size_t n = 1; n <= 6; ++n) {
        double err_nested = 0.0, err_standard = 0.0;
        for (const auto& run : {run1, run2})
            for (const auto& f : run) {
                auto theta = pod::project_l2(nested, f);
                theta.resize(n);
                theta.resize(nested.n_modes(), 0.0);
                auto rec = pod::reconstruct_linear(nested, theta);
                for (int d = 0; d < 16; ++d)
                    err_nested += (rec[d] - f[d]) * (rec[d] - f[d]);

                std::vector<double> rec2(16, 0.0);
                for (std::size_t m = 0; m < n; ++m) {
                    double dot = 0.0;
                    for (int d = 0; d < 16; ++d) dot += f[d] * svd.u(d, m);
                    for (int d = 0; d < 16; ++d) rec2[d] += dot * svd.u(d, m);
                }
                for (int d = 0; d < 16; ++d)
                    err_standard += (rec2[d] - f[d]) * (rec2[d] - f[d]);
            }
        CHECK(err_nested == doctest::Approx(err_standard).epsilon(1e-8));
    }
}

TEST_CASE("modes are orthonormal and projection error is monotone in n") {
    Rng rng(77);
    std::vector<std::vector<double>> run1, run2;
    for (int k = 0; k < 4; ++k) run1.push_back(random_field(rng));
    for (int k = 0; k < 4; ++k) run2.push_back(random_field(rng));
    auto set = make_set({run1, run2}, 2.0, 1.0);  // non-unit cell area

    pod::ReducedBasis basis = pod::nested_pod(set, 4, 8);
    for (std::size_t c1 = 0; c1 < basis.n_modes(); ++c1)
        for (std::size_t c2 = c1; c2 < basis.n_modes(); ++c2) {
            double dot = weighted_dot(set, basis.modes.column(c1), basis.modes.column(c2));
            CHECK(dot == doctest::Approx(c1 == c2 ? 1.0 : 0.0).epsilon(1e-10));
        }

    double prev = 1e300;
    for (std::size_t n = 1; n <= basis.n_modes(); ++n) {
        double err = 0.0;
        for (const auto& run : {run1, run2})
            for (const auto& f : run) {
                auto theta = pod::project_l2(basis, f);
                for (std::size_t m = n; m < theta.size(); ++m) theta[m] = 0.0;
                auto rec = pod::reconstruct_linear(basis, theta);
                for (int d = 0; d < 16; ++d) err += (rec[d] - f[d]) * (rec[d] - f[d]);
            }
        CHECK(err <= prev + 1e-12);
        prev = err;
    }
}

TEST_CASE("projection is linear and optimal against random competitors") {
    Rng rng(3);
    std::vector<std::vector<double>> run;
    for (int k = 0; k < 4; ++k) run.push_back(random_field(rng));
    auto set = make_set({run});
    pod::ReducedBasis basis = pod::nested_pod(set, 4, 3);

    auto f = random_field(rng);
    auto g = random_field(rng);
    auto tf = pod::project_l2(basis, f);
    auto tg = pod::project_l2(basis, g);
    std::vector<double> combo(16);
    for (int d = 0; d < 16; ++d) combo[d] = 2.0 * f[d] - 0.5 * g[d];
    auto tc = pod::project_l2(basis, combo);
    for (std::size_t m = 0; m < tc.size(); ++m)
        CHECK(tc[m] == doctest::Approx(2.0 * tf[m] - 0.5 * tg[m]).epsilon(1e-10));

    // theta matches an explicit Gram solve
    linalg::DenseMatrix gram(basis.n_modes(), basis.n_modes());
    std::vector<double> rhs(basis.n_modes());
    for (std::size_t i = 0; i < basis.n_modes(); ++i) {
        rhs[i] = weighted_dot(set, f, basis.modes.column(i));
        for (std::size_t j = 0; j < basis.n_modes(); ++j)
            gram(i, j) = weighted_dot(set, basis.modes.column(i), basis.modes.column(j));
    }
    auto theta_gram = linalg::solve_spd(gram, rhs);
    CHECK(oracles::max_abs_diff(tf, theta_gram) < 1e-10);

    // optimality: projected reconstruction beats random coefficients
    auto rec = pod::reconstruct_linear(basis, tf);
    double best = 0.0;
    for (int d = 0; d < 16; ++d) best += (rec[d] - f[d]) * (rec[d] - f[d]);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> c(tf);
        for (double& x : c) x += rng.uniform(-0.1, 0.1);
        auto rc = pod::reconstruct_linear(basis, c);
        double err = 0.0;
        for (int d = 0; d < 16; ++d) err += (rc[d] - f[d]) * (rc[d] - f[d]);
        CHECK(err >= best - 1e-12);
    }
}

TEST_CASE("rank-deficient data returns the achievable rank with a flag") {
    Rng rng(5);
    auto f = random_field(rng);
    auto set = make_set({{f, f, f}});  // rank 1
    pod::ReducedBasis basis = pod::nested_pod(set, 3, 3);
    CHECK(basis.rank_deficient);
    CHECK(basis.n_modes() == 1);
}

TEST_CASE("normalized eigenvalues: rank-1 data, duplication, monotonicity") {
    Rng rng(6);
    auto f = random_field(rng);
    auto set1 = make_set({{f}});
    auto decay1 = pod::normalized_eigenvalues(set1, 1);
    CHECK(decay1[0] == doctest::Approx(1.0));

    std::vector<std::vector<double>> run;
    for (int k = 0; k < 3; ++k) run.push_back(random_field(rng));
    auto set = make_set({run});
    auto decay = pod::normalized_eigenvalues(set, 3);
    for (std::size_t k = 1; k < decay.size(); ++k) CHECK(decay[k] <= decay[k - 1] + 1e-15);
    CHECK(decay[0] == doctest::Approx(1.0));

    // duplicating the trajectory doubles energy but not the decay shape
    auto dup = make_set({run, run});
    auto decay_dup = pod::normalized_eigenvalues(dup, 3);
    for (std::size_t k = 0; k < decay.size(); ++k)
        CHECK(decay_dup[k] == doctest::Approx(decay[k]).epsilon(1e-8));
}

TEST_CASE("basis checkpoint round-trips") {
    Rng rng(9);
    std::vector<std::vector<double>> run;
    for (int k = 0; k < 3; ++k) run.push_back(random_field(rng));
    auto set = make_set({run});
    pod::ReducedBasis basis = pod::nested_pod(set, 3, 2);
    basis.provenance = "unit-test set";

    auto path = std::filesystem::temp_directory_path() / "rpom_basis_test.rpom";
    basis.save(path);
    pod::ReducedBasis back = pod::ReducedBasis::load(path);

    CHECK(back.modes.a == basis.modes.a);
    CHECK(back.singular_values == basis.singular_values);
    CHECK(back.n_int == basis.n_int);
    CHECK(back.weight == basis.weight);
    CHECK(back.rank_deficient == basis.rank_deficient);
    CHECK(back.provenance == basis.provenance);
}

TEST_CASE("nested_pod validates its preconditions") {
    Rng rng(2);
    auto set = make_set({{random_field(rng), random_field(rng)}});
    CHECK_THROWS_AS(pod::nested_pod(set, 3, 1), Error);  // n_int > shortest run
    CHECK_THROWS_AS(pod::nested_pod(set, 2, 5), Error);  // n > n_int * M
}
