#include "rpom/rom.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rpom/io.hpp"

namespace rpom::rom {

const char* approximator_name(ApproximatorKind k) {
    switch (k) {
        case ApproximatorKind::ann: return "ANN";
        case ApproximatorKind::rbf_linear: return "L-RBF";
        default: return "C-RBF";
    }
}

std::vector<std::vector<double>> normalized_fields(const store::SnapshotSet& set,
                                                   store::Split which) {
    auto idx = set.indices_of(which);
    require(!idx.empty(), Errc::EmptySplit, "normalized_fields: empty split");
    std::vector<std::vector<double>> out;
    for (std::size_t i : idx)
        for (const Field& f : set.runs[i].temperature)
            out.push_back(store::normalize(f.v, set.temp_lo, set.temp_hi));
    return out;
}

std::vector<std::vector<double>> project_split(const pod::ReducedBasis& basis,
                                               const store::SnapshotSet& set,
                                               store::Split which) {
    auto idx = set.indices_of(which);
    require(!idx.empty(), Errc::EmptySplit, "project_split: empty split");
    std::vector<std::vector<double>> out;
    for (std::size_t i : idx)
        for (const Field& f : set.runs[i].temperature)
            out.push_back(pod::project_l2(basis, f.v));
    return out;
}

std::vector<std::vector<double>> encode_split(const RomModel& model,
                                              const store::SnapshotSet& set,
                                              store::Split which) {
    require(model.kind == RomKind::nonlinear, Errc::ConfigError,
            "encode_split: model has no encoder");
    std::vector<std::vector<double>> out;
    for (const auto& field : normalized_fields(set, which))
        out.push_back(model.ae_kind == AeKind::conv ? model.conv_ae->encode_one(field)
                                                    : model.mlp_ae->encode_one(field));
    return out;
}

namespace {

std::vector<double> approximate_latent(const RomModel& model, std::span<const double> x) {
    if (model.approximator == ApproximatorKind::ann) return model.approx_mlp->forward(x);
    return rbf::eval_rbf(*model.approx_rbf, x);
}

} // namespace

PredictResult predict_field(const RomModel& model, double t, std::span<const double> mu) {
    require(mu.size() + 1 == model.input_scaling.dims(), Errc::ShapeMismatch,
            "predict_field: parameter count mismatch");
    std::vector<double> raw;
    raw.reserve(1 + mu.size());
    raw.push_back(t);
    raw.insert(raw.end(), mu.begin(), mu.end());
    std::vector<double> x = model.input_scaling.scale(raw);

    PredictResult result;
    for (double v : x)
        if (v < -1e-12 || v > 1.0 + 1e-12) result.extrapolated = true;

    result.field = Field(model.grid.nx, model.grid.ny);
    if (model.kind == RomKind::linear) {
        std::vector<double> theta_scaled = model.regressor->forward(x);
        std::vector<double> theta = model.target_scaling.unscale(theta_scaled);
        result.field.v = pod::reconstruct_linear(*model.basis, theta);
    } else {
        std::vector<double> z_scaled = approximate_latent(model, x);
        std::vector<double> z = model.target_scaling.unscale(z_scaled);
        std::vector<double> normalized = model.ae_kind == AeKind::conv
                                             ? model.conv_ae->decode_one(z)
                                             : model.mlp_ae->decode_one(z);
        result.field.v = store::denormalize(normalized, model.field_lo, model.field_hi);
    }
    return result;
}

Field diff_field(const Field& fom_field, const Field& rom_field) {
    require(fom_field.nx == rom_field.nx && fom_field.ny == rom_field.ny, Errc::ShapeMismatch,
            "diff_field: shape mismatch");
    Field out(fom_field.nx, fom_field.ny);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = std::abs(fom_field.v[i] - rom_field.v[i]);
    return out;
}

TrajectoryMetrics trajectory_metrics(const RomModel& model, const fom::Trajectory& traj) {
    require(traj.steps() >= 1, Errc::EmptyData, "trajectory_metrics: empty trajectory");
    require(traj.grid == model.grid, Errc::ShapeMismatch, "trajectory_metrics: grid mismatch");

    TrajectoryMetrics m;
    const double dofs = static_cast<double>(traj.grid.cells());
    for (std::size_t k = 0; k < traj.steps(); ++k) {
        PredictResult pred = predict_field(model, traj.timestamps[k], traj.mu);
        double sq = 0.0;
        for (std::size_t d = 0; d < pred.field.v.size(); ++d) {
            double diff = std::abs(traj.temperature[k].v[d] - pred.field.v[d]);
            m.max_diff = std::max(m.max_diff, diff);
            sq += diff * diff;
        }
        m.per_step_mse.push_back(sq / dofs);
    }
    for (double v : m.per_step_mse) m.mse += v;
    m.mse /= static_cast<double>(m.per_step_mse.size());
    return m;
}

std::vector<double> moving_average_mse(std::span<const double> series, std::size_t window) {
    require(!series.empty(), Errc::EmptyData, "moving_average_mse: empty series");
    require(window >= 1, Errc::ConfigError, "moving_average_mse: window must be >= 1");
    std::vector<double> out(series.size());
    double running = 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
        running += series[k];
        if (k >= window) running -= series[k - window];
        out[k] = running / static_cast<double>(std::min(window, k + 1));
    }
    return out;
}

RomModel build_linear_rom(const store::SnapshotSet& set, std::size_t n_int, std::size_t n,
                          const neural::TrainConfig& regressor_cfg) {
    RomModel model;
    model.kind = RomKind::linear;
    model.grid = set.grid;
    model.field_lo = set.temp_lo;
    model.field_hi = set.temp_hi;
    model.input_scaling = set.input_scaling();

    pod::ReducedBasis basis = pod::nested_pod(set, n_int, n);
    basis.provenance = "train split, M=" +
                       std::to_string(set.indices_of(store::Split::train).size());
    model.name = "POD " + std::to_string(basis.n_modes()) + " RB";

    auto theta_train = project_split(basis, set, store::Split::train);
    auto theta_val = project_split(basis, set, store::Split::validation);
    model.target_scaling = store::ComponentScaling::from_samples(
        theta_train, std::vector<std::uint8_t>(basis.n_modes(), 0));

    auto train_pairs =
        store::stack_training_pairs(set, store::Split::train, theta_train, model.target_scaling);
    auto val_pairs = store::stack_training_pairs(set, store::Split::validation, theta_val,
                                                 model.target_scaling);

    neural::RegressorResult reg =
        neural::train_regressor(train_pairs, val_pairs, static_cast<int>(model.input_scaling.dims()),
                                static_cast<int>(basis.n_modes()), regressor_cfg);
    model.basis = std::move(basis);
    model.regressor = std::move(reg.model);
    return model;
}

namespace {

RomModel fit_latent_approximator(RomModel model, const store::SnapshotSet& set,
                                 ApproximatorKind approx, const neural::TrainConfig& approx_cfg,
                                 double rbf_lambda) {
    auto z_train = encode_split(model, set, store::Split::train);
    std::size_t q = z_train.front().size();
    model.target_scaling =
        store::ComponentScaling::from_samples(z_train, std::vector<std::uint8_t>(q, 0));
    model.approximator = approx;
    model.name = "AE " + std::to_string(q) + " z: " + approximator_name(approx);
    model.approx_mlp.reset();
    model.approx_rbf.reset();

    auto train_pairs =
        store::stack_training_pairs(set, store::Split::train, z_train, model.target_scaling);
    if (approx == ApproximatorKind::ann) {
        auto z_val = encode_split(model, set, store::Split::validation);
        auto val_pairs = store::stack_training_pairs(set, store::Split::validation, z_val,
                                                     model.target_scaling);
        neural::RegressorResult reg = neural::train_regressor(
            train_pairs, val_pairs, static_cast<int>(model.input_scaling.dims()),
            static_cast<int>(q), approx_cfg);
        model.approx_mlp = std::move(reg.model);
    } else {
        linalg::DenseMatrix centers(train_pairs.size(), model.input_scaling.dims());
        linalg::DenseMatrix values(train_pairs.size(), q);
        for (std::size_t i = 0; i < train_pairs.size(); ++i) {
            for (std::size_t c = 0; c < centers.cols; ++c) centers(i, c) = train_pairs[i].input[c];
            for (std::size_t c = 0; c < q; ++c) values(i, c) = train_pairs[i].target[c];
        }
        rbf::Kernel kernel = approx == ApproximatorKind::rbf_linear ? rbf::Kernel::linear
                                                                    : rbf::Kernel::cubic;
        model.approx_rbf = rbf::fit_rbf(centers, values, kernel, rbf_lambda);
    }
    return model;
}

} // namespace

RomModel build_nonlinear_rom(const store::SnapshotSet& set, const neural::ConvAeSpec& ae_spec,
                             ApproximatorKind approx, const neural::TrainConfig& ae_cfg,
                             const neural::TrainConfig& approx_cfg, double rbf_lambda) {
    require(set.grid.nx == set.grid.ny && set.grid.nx == ae_spec.side, Errc::ConfigError,
            "build_nonlinear_rom: conv autoencoder needs a square grid matching spec.side");
    RomModel model;
    model.kind = RomKind::nonlinear;
    model.ae_kind = AeKind::conv;
    model.grid = set.grid;
    model.field_lo = set.temp_lo;
    model.field_hi = set.temp_hi;
    model.input_scaling = set.input_scaling();

    auto train_fields = normalized_fields(set, store::Split::train);
    auto val_fields = normalized_fields(set, store::Split::validation);
    neural::ConvAeTrainResult ae = neural::train_autoencoder(train_fields, val_fields, ae_spec, ae_cfg);
    model.conv_ae = std::move(ae.model);
    return fit_latent_approximator(std::move(model), set, approx, approx_cfg, rbf_lambda);
}

RomModel build_nonlinear_rom(const store::SnapshotSet& set, const neural::MlpAeSpec& ae_spec,
                             ApproximatorKind approx, const neural::TrainConfig& ae_cfg,
                             const neural::TrainConfig& approx_cfg, double rbf_lambda) {
    require(set.grid.nx * set.grid.ny == ae_spec.side * ae_spec.side, Errc::ConfigError,
            "build_nonlinear_rom: grid size must match spec.side^2");
    RomModel model;
    model.kind = RomKind::nonlinear;
    model.ae_kind = AeKind::mlp;
    model.grid = set.grid;
    model.field_lo = set.temp_lo;
    model.field_hi = set.temp_hi;
    model.input_scaling = set.input_scaling();

    auto train_fields = normalized_fields(set, store::Split::train);
    auto val_fields = normalized_fields(set, store::Split::validation);
    neural::MlpAeTrainResult ae =
        neural::train_mlp_autoencoder(train_fields, val_fields, ae_spec, ae_cfg);
    model.mlp_ae = std::move(ae.model);
    return fit_latent_approximator(std::move(model), set, approx, approx_cfg, rbf_lambda);
}

RomModel swap_approximator(const RomModel& model, const store::SnapshotSet& set,
                           ApproximatorKind approx, const neural::TrainConfig& approx_cfg,
                           double rbf_lambda) {
    require(model.kind == RomKind::nonlinear, Errc::ConfigError,
            "swap_approximator: linear models have a fixed regressor");
    return fit_latent_approximator(model, set, approx, approx_cfg, rbf_lambda);
}

// ---- bundle persistence ----

namespace {

std::string scaling_to_text(const std::string& prefix, const store::ComponentScaling& s) {
    std::ostringstream out;
    out << prefix << "_dims = " << s.dims() << "\n";
    for (std::size_t c = 0; c < s.dims(); ++c) {
        out << prefix << "_lo" << c << " = " << store::format_double(s.lo[c]) << "\n";
        out << prefix << "_hi" << c << " = " << store::format_double(s.hi[c]) << "\n";
        out << prefix << "_log" << c << " = " << int(s.log10[c]) << "\n";
    }
    return out.str();
}

std::map<std::string, std::string> parse_flat_keys(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open manifest: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto pos = line.find('=');
        if (pos == std::string::npos) continue;
        auto trim = [](std::string s) {
            std::size_t a = s.find_first_not_of(" \t\r");
            std::size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, pos))] = trim(line.substr(pos + 1));
    }
    return kv;
}

store::ComponentScaling scaling_from_keys(const std::map<std::string, std::string>& kv,
                                          const std::string& prefix) {
    store::ComponentScaling s;
    std::size_t dims = std::stoul(kv.at(prefix + "_dims"));
    for (std::size_t c = 0; c < dims; ++c) {
        s.lo.push_back(std::stod(kv.at(prefix + "_lo" + std::to_string(c))));
        s.hi.push_back(std::stod(kv.at(prefix + "_hi" + std::to_string(c))));
        s.log10.push_back(static_cast<std::uint8_t>(std::stoi(kv.at(prefix + "_log" + std::to_string(c)))));
    }
    return s;
}

} // namespace

void RomModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);

    std::ostringstream manifest;
    manifest << "kind = " << (kind == RomKind::linear ? "linear" : "nonlinear") << "\n";
    manifest << "name = " << name << "\n";
    manifest << "grid_nx = " << grid.nx << "\n";
    manifest << "grid_ny = " << grid.ny << "\n";
    manifest << "grid_lx = " << store::format_double(grid.lx) << "\n";
    manifest << "grid_ly = " << store::format_double(grid.ly) << "\n";
    manifest << "field_lo = " << store::format_double(field_lo) << "\n";
    manifest << "field_hi = " << store::format_double(field_hi) << "\n";
    manifest << scaling_to_text("input", input_scaling);
    manifest << scaling_to_text("target", target_scaling);

    if (kind == RomKind::linear) {
        basis->save(dir / "basis.rpom");
        regressor->save(dir / "regressor.rpom");
        manifest << "basis = basis.rpom\nregressor = regressor.rpom\n";
    } else {
        manifest << "ae_kind = " << (ae_kind == AeKind::conv ? "conv" : "mlp") << "\n";
        if (ae_kind == AeKind::conv) {
            conv_ae->save(dir / "autoencoder.rpom");
        } else {
            mlp_ae->save(dir / "autoencoder.rpom");
        }
        manifest << "autoencoder = autoencoder.rpom\n";
        manifest << "approximator = " << approximator_name(approximator) << "\n";
        if (approximator == ApproximatorKind::ann) {
            approx_mlp->save(dir / "approximator.rpom");
        } else {
            approx_rbf->save(dir / "approximator.rpom");
        }
        manifest << "approximator_file = approximator.rpom\n";
    }
    io::write_text_atomic(dir / "manifest.txt", manifest.str());
}

RomModel RomModel::load(const std::filesystem::path& dir) {
    auto kv = parse_flat_keys(dir / "manifest.txt");
    RomModel m;
    m.kind = kv.at("kind") == "linear" ? RomKind::linear : RomKind::nonlinear;
    m.name = kv.at("name");
    m.grid.nx = std::stoi(kv.at("grid_nx"));
    m.grid.ny = std::stoi(kv.at("grid_ny"));
    m.grid.lx = std::stod(kv.at("grid_lx"));
    m.grid.ly = std::stod(kv.at("grid_ly"));
    m.field_lo = std::stod(kv.at("field_lo"));
    m.field_hi = std::stod(kv.at("field_hi"));
    m.input_scaling = scaling_from_keys(kv, "input");
    m.target_scaling = scaling_from_keys(kv, "target");

    if (m.kind == RomKind::linear) {
        m.basis = pod::ReducedBasis::load(dir / kv.at("basis"));
        m.regressor = neural::Mlp::load(dir / kv.at("regressor"));
    } else {
        m.ae_kind = kv.at("ae_kind") == "conv" ? AeKind::conv : AeKind::mlp;
        if (m.ae_kind == AeKind::conv) {
            m.conv_ae = neural::ConvAe::load(dir / kv.at("autoencoder"));
        } else {
            m.mlp_ae = neural::MlpAe::load(dir / kv.at("autoencoder"));
        }
        std::string approx = kv.at("approximator");
        m.approximator = approx == "ANN" ? ApproximatorKind::ann
                         : approx == "L-RBF" ? ApproximatorKind::rbf_linear
                                             : ApproximatorKind::rbf_cubic;
        if (m.approximator == ApproximatorKind::ann) {
            m.approx_mlp = neural::Mlp::load(dir / kv.at("approximator_file"));
        } else {
            m.approx_rbf = rbf::RbfModel::load(dir / kv.at("approximator_file"));
        }
    }
    return m;
}

std::string SpeedupReport::csv() const {
    std::ostringstream out;
    out << "fom_seconds,fom_steps,rom_single_query_seconds,rom_replay_seconds,"
           "speedup_single_query,speedup_replay\n";
    out << store::format_double(fom_seconds) << "," << fom_steps << ","
        << store::format_double(rom_single_query_seconds) << ","
        << store::format_double(rom_replay_seconds) << ","
        << store::format_double(ratio_single()) << "," << store::format_double(ratio_replay())
        << "\n";
    return out.str();
}

SpeedupReport benchmark_speedup(const RomModel& model, const fom::Scenario& sc,
                                const fom::SolverParams& params, std::span<const double> mu) {
    using clock = std::chrono::steady_clock;
    SpeedupReport report;

    auto t0 = clock::now();
    fom::Trajectory traj = fom::run_simulation(sc, params, mu);
    report.fom_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    report.fom_steps = traj.steps();

    // Repeat the single query until the accumulated time is measurable.
    double t_query = traj.timestamps.back() * 0.5;
    int reps = 1;
    double elapsed = 0.0;
    for (;;) {
        auto q0 = clock::now();
        for (int r = 0; r < reps; ++r) {
            volatile double sink =
                predict_field(model, t_query, mu).field.v[0];
            (void)sink;
        }
        elapsed = std::chrono::duration<double>(clock::now() - q0).count();
        if (elapsed > 0.01 || reps >= (1 << 20)) break;
        reps *= 2;
    }
    report.rom_single_query_seconds = elapsed / reps;

    auto r0 = clock::now();
    for (double t : traj.timestamps) {
        volatile double sink = predict_field(model, t, mu).field.v[0];
        (void)sink;
    }
    report.rom_replay_seconds = std::chrono::duration<double>(clock::now() - r0).count();
    return report;
}

} // namespace rpom::rom
