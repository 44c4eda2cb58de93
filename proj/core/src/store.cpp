#include "rpom/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "rpom/io.hpp"
#include "rpom/rng.hpp"

namespace rpom::store {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "test";
    }
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> ComponentScaling::scale(std::span<const double> x) const {
    require(x.size() == dims(), Errc::ShapeMismatch, "scaling: component count mismatch");
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
        double v = log10[c] ? std::log10(x[c]) : x[c];
        out[c] = (hi[c] > lo[c]) ? (v - lo[c]) / (hi[c] - lo[c]) : 0.0;
    }
    return out;
}

std::vector<double> ComponentScaling::unscale(std::span<const double> y) const {
    require(y.size() == dims(), Errc::ShapeMismatch, "scaling: component count mismatch");
    std::vector<double> out(y.size());
    for (std::size_t c = 0; c < y.size(); ++c) {
        double v = (hi[c] > lo[c]) ? lo[c] + y[c] * (hi[c] - lo[c]) : lo[c];
        out[c] = log10[c] ? std::pow(10.0, v) : v;
    }
    return out;
}

ComponentScaling ComponentScaling::from_samples(const std::vector<std::vector<double>>& samples,
                                                const std::vector<std::uint8_t>& log_flags) {
    require(!samples.empty(), Errc::EmptyData, "scaling: no samples");
    std::size_t d = samples.front().size();
    ComponentScaling s;
    s.lo.assign(d, std::numeric_limits<double>::infinity());
    s.hi.assign(d, -std::numeric_limits<double>::infinity());
    s.log10.assign(d, 0);
    for (std::size_t c = 0; c < d && c < log_flags.size(); ++c) s.log10[c] = log_flags[c];
    for (const auto& row : samples) {
        require(row.size() == d, Errc::ShapeMismatch, "scaling: ragged samples");
        for (std::size_t c = 0; c < d; ++c) {
            double v = s.log10[c] ? std::log10(row[c]) : row[c];
            s.lo[c] = std::min(s.lo[c], v);
            s.hi[c] = std::max(s.hi[c], v);
        }
    }
    return s;
}

std::vector<double> normalize(std::span<const double> field, double lo, double hi) {
    require(hi >= lo, Errc::ConfigError, "normalize: hi must be >= lo");
    std::vector<double> out(field.size());
    if (hi == lo) return out;
    double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = (field[i] - lo) * inv;
    return out;
}

std::vector<double> denormalize(std::span<const double> field, double lo, double hi) {
    std::vector<double> out(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) out[i] = lo + field[i] * (hi - lo);
    return out;
}

void DatasetSpec::validate() const {
    require(m_train >= 1, Errc::ConfigError, "dataset: need at least one training run");
    require(m_validation >= 0 && m_test >= 0, Errc::ConfigError, "dataset: negative split size");
    require(!mu_ranges.empty(), Errc::ConfigError, "dataset: no parameter ranges");
    for (const auto& r : mu_ranges) {
        require(r.hi >= r.lo, Errc::ConfigError, "dataset: inverted parameter range");
        if (r.log10) require(r.lo > 0.0, Errc::ConfigError, "dataset: log range must be positive");
    }
}

namespace {

double placed(const MuRange& r, double unit) {
    if (r.log10) {
        double e = std::log10(r.lo) + unit * (std::log10(r.hi) - std::log10(r.lo));
        return std::pow(10.0, e);
    }
    return r.lo + unit * (r.hi - r.lo);
}

bool close_mu(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t c = 0; c < a.size(); ++c) {
        double scale = std::max({std::abs(a[c]), std::abs(b[c]), 1e-300});
        if (std::abs(a[c] - b[c]) > 1e-9 * scale) return false;
    }
    return true;
}

} // namespace

SamplePlan plan_parameter_samples(const DatasetSpec& spec) {
    spec.validate();
    const std::size_t p = spec.mu_ranges.size();

    SamplePlan plan;

    // Training grid: equispaced per component; multiple parameters form a
    // tensor grid, so m_train must be a perfect p-th power.
    std::size_t per_axis = spec.m_train;
    if (p > 1) {
        per_axis = static_cast<std::size_t>(std::llround(std::pow(double(spec.m_train), 1.0 / double(p))));
        std::size_t total = 1;
        for (std::size_t c = 0; c < p; ++c) total *= per_axis;
        require(total == static_cast<std::size_t>(spec.m_train), Errc::ConfigError,
                "dataset: m_train must be a perfect power of the parameter count");
    }

    std::vector<std::size_t> idx(p, 0);
    for (int k = 0; k < spec.m_train; ++k) {
        std::vector<double> mu(p);
        for (std::size_t c = 0; c < p; ++c) {
            double unit = (per_axis == 1) ? 0.0
                                          : static_cast<double>(idx[c]) / static_cast<double>(per_axis - 1);
            mu[c] = placed(spec.mu_ranges[c], unit);
        }
        plan.mu.push_back(std::move(mu));
        plan.split.push_back(Split::train);
        for (std::size_t c = p; c-- > 0;) {
            if (++idx[c] < per_axis) break;
            idx[c] = 0;
        }
    }

    // Validation and test: seeded draws, strictly disjoint from everything
    // sampled so far.
    Rng rng(spec.seed);
    auto draw_disjoint = [&](Split s, int count) {
        for (int k = 0; k < count; ++k) {
            for (int attempt = 0; attempt < 10000; ++attempt) {
                std::vector<double> mu(p);
                for (std::size_t c = 0; c < p; ++c) mu[c] = placed(spec.mu_ranges[c], rng.uniform());
                bool clash = false;
                for (const auto& other : plan.mu)
                    if (close_mu(mu, other)) { clash = true; break; }
                if (!clash) {
                    plan.mu.push_back(std::move(mu));
                    plan.split.push_back(s);
                    break;
                }
            }
        }
    };
    draw_disjoint(Split::validation, spec.m_validation);
    draw_disjoint(Split::test, spec.m_test);
    require(plan.mu.size() ==
                static_cast<std::size_t>(spec.m_train + spec.m_validation + spec.m_test),
            Errc::InsufficientRuns, "dataset: could not draw disjoint samples");
    return plan;
}

std::vector<std::size_t> SnapshotSet::indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::size_t SnapshotSet::min_steps(Split s) const {
    std::size_t m = std::numeric_limits<std::size_t>::max();
    for (std::size_t i : indices_of(s)) m = std::min(m, runs[i].steps());
    return m == std::numeric_limits<std::size_t>::max() ? 0 : m;
}

ComponentScaling SnapshotSet::input_scaling() const {
    auto train = indices_of(Split::train);
    require(!train.empty(), Errc::EmptySplit, "input_scaling: empty train split");

    std::vector<std::vector<double>> samples;
    for (std::size_t i : train) {
        const auto& run = runs[i];
        for (double t : run.timestamps) {
            std::vector<double> row;
            row.reserve(1 + run.mu.size());
            row.push_back(t);
            row.insert(row.end(), run.mu.begin(), run.mu.end());
            samples.push_back(std::move(row));
        }
    }
    std::vector<std::uint8_t> flags(1, 0);  // time is never log-scaled
    flags.insert(flags.end(), mu_log.begin(), mu_log.end());
    return ComponentScaling::from_samples(samples, flags);
}

void SnapshotSet::compute_bounds() {
    auto train = indices_of(Split::train);
    require(!train.empty(), Errc::EmptySplit, "compute_bounds: empty train split");
    temp_lo = std::numeric_limits<double>::infinity();
    temp_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i : train) {
        for (const Field& f : runs[i].temperature) {
            temp_lo = std::min(temp_lo, f.min());
            temp_hi = std::max(temp_hi, f.max());
        }
    }
}

SnapshotSet split_set(std::vector<fom::Trajectory> runs, const DatasetSpec& spec) {
    SamplePlan plan = plan_parameter_samples(spec);
    require(runs.size() >= plan.mu.size(), Errc::InsufficientRuns,
            "split_set: fewer trajectories than planned samples");

    SnapshotSet set;
    set.mu_log.clear();
    for (const auto& r : spec.mu_ranges) set.mu_log.push_back(r.log10 ? 1 : 0);

    std::vector<bool> used(runs.size(), false);
    for (std::size_t k = 0; k < plan.mu.size(); ++k) {
        bool found = false;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            if (used[i] || !close_mu(runs[i].mu, plan.mu[k])) continue;
            used[i] = true;
            set.runs.push_back(std::move(runs[i]));
            set.splits.push_back(plan.split[k]);
            found = true;
            break;
        }
        require(found, Errc::InsufficientRuns, "split_set: no trajectory for a planned sample");
    }
    set.grid = set.runs.front().grid;
    for (const auto& r : set.runs)
        require(r.grid == set.grid, Errc::ShapeMismatch, "split_set: mixed grids");
    set.compute_bounds();
    return set;
}

namespace {

std::vector<TrainingPair> stack_impl(const SnapshotSet& set, Split which,
                                     const std::vector<std::vector<double>>* latents,
                                     const ComponentScaling* target_scaling) {
    auto idx = set.indices_of(which);
    require(!idx.empty(), Errc::EmptySplit, "stack_training_pairs: empty split");
    ComponentScaling in_scale = set.input_scaling();

    std::vector<TrainingPair> pairs;
    std::size_t flat = 0;
    for (std::size_t i : idx) {
        const auto& run = set.runs[i];
        for (std::size_t k = 0; k < run.steps(); ++k, ++flat) {
            TrainingPair pair;
            std::vector<double> raw;
            raw.reserve(1 + run.mu.size());
            raw.push_back(run.timestamps[k]);
            raw.insert(raw.end(), run.mu.begin(), run.mu.end());
            pair.input = in_scale.scale(raw);
            if (latents) {
                require(flat < latents->size(), Errc::ShapeMismatch,
                        "stack_training_pairs: latent count mismatch");
                pair.target = target_scaling->scale((*latents)[flat]);
            } else {
                pair.target = normalize(run.temperature[k].v, set.temp_lo, set.temp_hi);
            }
            pairs.push_back(std::move(pair));
        }
    }
    if (latents)
        require(flat == latents->size(), Errc::ShapeMismatch,
                "stack_training_pairs: latent count mismatch");
    return pairs;
}

} // namespace

std::vector<TrainingPair> stack_training_pairs(const SnapshotSet& set, Split which) {
    return stack_impl(set, which, nullptr, nullptr);
}

std::vector<TrainingPair> stack_training_pairs(const SnapshotSet& set, Split which,
                                               const std::vector<std::vector<double>>& latents,
                                               const ComponentScaling& target_scaling) {
    return stack_impl(set, which, &latents, &target_scaling);
}

Field regrid_bilinear(const Field& src, const Grid& src_grid, const Grid& dst_grid) {
    require(src.nx == src_grid.nx && src.ny == src_grid.ny, Errc::ShapeMismatch,
            "regrid: field/grid mismatch");
    require(src_grid.same_domain(dst_grid), Errc::DomainMismatch,
            "regrid: grids cover different domains");

    Field out(dst_grid.nx, dst_grid.ny, 0.0);
    const double sdx = src_grid.dx(), sdy = src_grid.dy();
    for (int j = 0; j < dst_grid.ny; ++j) {
        for (int i = 0; i < dst_grid.nx; ++i) {
            // Fractional index into the source cell-center lattice, clamped
            // to the hull so every sample is a convex combination.
            double fx = (dst_grid.xc(i) - 0.5 * sdx) / sdx;
            double fy = (dst_grid.yc(j) - 0.5 * sdy) / sdy;
            fx = std::clamp(fx, 0.0, double(src_grid.nx - 1));
            fy = std::clamp(fy, 0.0, double(src_grid.ny - 1));
            int i0 = std::min(static_cast<int>(fx), src_grid.nx - 2);
            int j0 = std::min(static_cast<int>(fy), src_grid.ny - 2);
            i0 = std::max(i0, 0);
            j0 = std::max(j0, 0);
            double ax = fx - i0, ay = fy - j0;
            out(i, j) = (1 - ax) * (1 - ay) * src(i0, j0) + ax * (1 - ay) * src(i0 + 1, j0) +
                        (1 - ax) * ay * src(i0, j0 + 1) + ax * ay * src(i0 + 1, j0 + 1);
        }
    }
    return out;
}

void write_trajectory(const fom::Trajectory& traj, const std::filesystem::path& path) {
    io::Writer w(io::Kind::trajectory);
    w.u32(static_cast<std::uint32_t>(traj.grid.nx));
    w.u32(static_cast<std::uint32_t>(traj.grid.ny));
    w.f64(traj.grid.lx);
    w.f64(traj.grid.ly);
    w.u32(traj.has_flow() ? 1u : 0u);
    w.u64(traj.mu.size());
    w.f64_array(traj.mu);
    w.u64(traj.steps());
    w.f64_array(traj.timestamps);
    for (std::size_t k = 0; k < traj.steps(); ++k) {
        w.f64_array(traj.temperature[k].v);
        if (traj.has_flow()) {
            w.f64_array(traj.pressure[k].v);
            w.f64_array(traj.velocity[k].u);
            w.f64_array(traj.velocity[k].v);
        }
    }
    w.commit(path);
}

fom::Trajectory read_trajectory(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::trajectory);

    fom::Trajectory traj;
    traj.grid.nx = static_cast<int>(r.u32());
    traj.grid.ny = static_cast<int>(r.u32());
    traj.grid.lx = r.f64();
    traj.grid.ly = r.f64();
    bool flow = r.u32() != 0;
    std::size_t mu_len = r.u64();
    traj.mu = r.f64_array(mu_len);
    std::size_t steps = r.u64();
    traj.timestamps = r.f64_array(steps);

    const std::size_t cells = traj.grid.cells();
    for (std::size_t k = 0; k < steps; ++k) {
        Field t(traj.grid.nx, traj.grid.ny);
        t.v = r.f64_array(cells);
        traj.temperature.push_back(std::move(t));
        if (flow) {
            Field p(traj.grid.nx, traj.grid.ny);
            p.v = r.f64_array(cells);
            traj.pressure.push_back(std::move(p));
            FaceVelocity vel(traj.grid.nx, traj.grid.ny);
            vel.u = r.f64_array(vel.u.size());
            vel.v = r.f64_array(vel.v.size());
            traj.velocity.push_back(std::move(vel));
        }
    }
    return traj;
}

std::string split_manifest_csv(const SnapshotSet& set, std::span<const std::string> run_ids) {
    require(run_ids.size() == set.runs.size(), Errc::ShapeMismatch,
            "split_manifest_csv: id count mismatch");
    std::size_t p = set.runs.empty() ? 0 : set.runs.front().mu.size();
    std::ostringstream out;
    out << "run_id";
    for (std::size_t c = 0; c < p; ++c) out << ",mu" << c;
    out << ",split,n_steps\n";
    for (std::size_t i = 0; i < set.runs.size(); ++i) {
        out << run_ids[i];
        for (double m : set.runs[i].mu) out << "," << format_double(m);
        out << "," << split_name(set.splits[i]) << "," << set.runs[i].steps() << "\n";
    }
    return out.str();
}

} // namespace rpom::store
