#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "rpom/cli.hpp"
#include "rpom/diagnostics.hpp"
#include "rpom/io.hpp"
#include "rpom/pod.hpp"
#include "rpom/rom.hpp"

namespace rpom::cli {

namespace {

namespace fs = std::filesystem;

std::string run_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "run_%03zu", index);
    return buf;
}

fs::path runs_dir(const RunConfig& cfg) { return fs::path(cfg.paths.data_dir); }

std::vector<fom::Trajectory> load_runs(const RunConfig& cfg) {
    std::vector<fs::path> files;
    if (fs::exists(runs_dir(cfg)))
        for (const auto& entry : fs::directory_iterator(runs_dir(cfg))) {
            const auto name = entry.path().filename().string();
            if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".traj")
                files.push_back(entry.path());
        }
    require(!files.empty(), Errc::InsufficientRuns,
            "no trajectories in " + runs_dir(cfg).string() + "; run `generate` first");
    std::sort(files.begin(), files.end());
    std::vector<fom::Trajectory> runs;
    runs.reserve(files.size());
    for (const auto& f : files) runs.push_back(store::read_trajectory(f));
    return runs;
}

store::SnapshotSet load_set(const RunConfig& cfg) {
    return store::split_set(load_runs(cfg), cfg.dataset);
}

rom::ApproximatorKind approximator_kind(const std::string& name) {
    if (name == "ann") return rom::ApproximatorKind::ann;
    if (name == "rbf-linear") return rom::ApproximatorKind::rbf_linear;
    return rom::ApproximatorKind::rbf_cubic;
}

neural::ConvAeSpec conv_spec(const RunConfig& cfg) {
    neural::ConvAeSpec spec;
    spec.side = cfg.scenario.grid.nx;
    spec.hidden = cfg.model.ae_hidden;
    spec.latent = cfg.model.q;
    spec.dropout_blocks = cfg.model.ae_dropout_blocks;
    return spec;
}

neural::MlpAeSpec mlp_spec(const RunConfig& cfg) {
    neural::MlpAeSpec spec;
    spec.side = cfg.scenario.grid.nx;
    spec.latent = cfg.model.q;
    return spec;
}

// All stages that need theta/z targets derive the scaling through these, so
// training and bundle assembly agree bitwise.
store::ComponentScaling theta_scaling(const pod::ReducedBasis& basis,
                                      const store::SnapshotSet& set) {
    auto theta = rom::project_split(basis, set, store::Split::train);
    return store::ComponentScaling::from_samples(
        theta, std::vector<std::uint8_t>(basis.n_modes(), 0));
}

void cmd_generate(const RunConfig& cfg) {
    cfg.validate();
    store::SamplePlan plan = store::plan_parameter_samples(cfg.dataset);
    fs::create_directories(runs_dir(cfg));

    std::vector<std::size_t> steps(plan.mu.size(), 0);
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= plan.mu.size()) return;
            try {
                fom::Trajectory traj = fom::run_simulation(cfg.scenario, cfg.solver, plan.mu[i]);
                steps[i] = traj.steps();
                store::write_trajectory(traj, runs_dir(cfg) / (run_id(i) + ".traj"));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::ostringstream csv;
    csv << "run_id";
    for (std::size_t c = 0; c < cfg.dataset.mu_ranges.size(); ++c) csv << ",mu" << c;
    csv << ",split,n_steps\n";
    for (std::size_t i = 0; i < plan.mu.size(); ++i) {
        csv << run_id(i);
        for (double m : plan.mu[i]) csv << "," << store::format_double(m);
        csv << "," << store::split_name(plan.split[i]) << "," << steps[i] << "\n";
    }
    io::write_text_atomic(runs_dir(cfg) / "runs.csv", csv.str());
}

void cmd_split(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < set.runs.size(); ++i) ids.push_back(run_id(i));
    io::write_text_atomic(fs::path(cfg.paths.data_dir) / "splits.csv",
                          store::split_manifest_csv(set, ids));

    std::ostringstream bounds;
    bounds << "temp_lo = " << store::format_double(set.temp_lo) << "\n";
    bounds << "temp_hi = " << store::format_double(set.temp_hi) << "\n";
    auto scaling = set.input_scaling();
    for (std::size_t c = 0; c < scaling.dims(); ++c) {
        bounds << "input_lo" << c << " = " << store::format_double(scaling.lo[c]) << "\n";
        bounds << "input_hi" << c << " = " << store::format_double(scaling.hi[c]) << "\n";
        bounds << "input_log" << c << " = " << int(scaling.log10[c]) << "\n";
    }
    io::write_text_atomic(fs::path(cfg.paths.data_dir) / "bounds.txt", bounds.str());
}

void cmd_train_pod(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    pod::ReducedBasis basis = pod::nested_pod(set, cfg.model.n_int, cfg.model.n);
    basis.provenance =
        "train split, M=" + std::to_string(set.indices_of(store::Split::train).size());
    fs::create_directories(cfg.paths.model_dir);
    basis.save(fs::path(cfg.paths.model_dir) / "basis.rpom");

    fs::create_directories(cfg.paths.report_dir);
    auto decay = pod::normalized_eigenvalues(set, cfg.model.n_int);
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "eigen_decay.csv",
                          pod::eigenvalue_csv(decay));
}

void cmd_train_ae(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    auto train_fields = rom::normalized_fields(set, store::Split::train);
    auto val_fields = rom::normalized_fields(set, store::Split::validation);
    fs::create_directories(cfg.paths.model_dir);
    fs::create_directories(cfg.paths.report_dir);

    if (cfg.model.ae == "conv") {
        auto result = neural::train_autoencoder(train_fields, val_fields, conv_spec(cfg),
                                                cfg.train_ae);
        result.model.save(fs::path(cfg.paths.model_dir) / "autoencoder.rpom");
        io::write_text_atomic(fs::path(cfg.paths.report_dir) / "ae_history.csv",
                              result.history.csv());
    } else {
        auto result = neural::train_mlp_autoencoder(train_fields, val_fields, mlp_spec(cfg),
                                                    cfg.train_ae);
        result.model.save(fs::path(cfg.paths.model_dir) / "autoencoder.rpom");
        io::write_text_atomic(fs::path(cfg.paths.report_dir) / "ae_history.csv",
                              result.history.csv());
    }
}

// Shared by train-approximator and build-rom so the assembled bundle matches
// the trained artifacts exactly.
rom::RomModel assemble_model(const RunConfig& cfg, const store::SnapshotSet& set,
                             bool train_missing) {
    rom::RomModel model;
    model.grid = set.grid;
    model.field_lo = set.temp_lo;
    model.field_hi = set.temp_hi;
    model.input_scaling = set.input_scaling();

    fs::path mdir(cfg.paths.model_dir);
    if (cfg.model.path == "linear") {
        model.kind = rom::RomKind::linear;
        model.basis = pod::ReducedBasis::load(mdir / "basis.rpom");
        model.name = "POD " + std::to_string(model.basis->n_modes()) + " RB";
        model.target_scaling = theta_scaling(*model.basis, set);
        fs::path reg = mdir / "regressor.rpom";
        if (train_missing) {
            auto theta_train = rom::project_split(*model.basis, set, store::Split::train);
            auto theta_val = rom::project_split(*model.basis, set, store::Split::validation);
            auto train_pairs = store::stack_training_pairs(set, store::Split::train, theta_train,
                                                           model.target_scaling);
            auto val_pairs = store::stack_training_pairs(set, store::Split::validation, theta_val,
                                                         model.target_scaling);
            auto result = neural::train_regressor(
                train_pairs, val_pairs, static_cast<int>(model.input_scaling.dims()),
                static_cast<int>(model.basis->n_modes()), cfg.train);
            result.model.save(reg);
            fs::create_directories(cfg.paths.report_dir);
            io::write_text_atomic(fs::path(cfg.paths.report_dir) / "regressor_history.csv",
                                  result.history.csv());
        }
        model.regressor = neural::Mlp::load(reg);
    } else {
        model.kind = rom::RomKind::nonlinear;
        model.ae_kind = cfg.model.ae == "conv" ? rom::AeKind::conv : rom::AeKind::mlp;
        if (model.ae_kind == rom::AeKind::conv)
            model.conv_ae = neural::ConvAe::load(mdir / "autoencoder.rpom");
        else
            model.mlp_ae = neural::MlpAe::load(mdir / "autoencoder.rpom");

        model.approximator = approximator_kind(cfg.model.approximator);
        auto z_train = rom::encode_split(model, set, store::Split::train);
        std::size_t q = z_train.front().size();
        model.target_scaling = store::ComponentScaling::from_samples(
            z_train, std::vector<std::uint8_t>(q, 0));
        model.name = "AE " + std::to_string(q) + " z: " +
                     rom::approximator_name(model.approximator);

        fs::path approx = mdir / "approximator.rpom";
        if (train_missing) {
            auto train_pairs = store::stack_training_pairs(set, store::Split::train, z_train,
                                                           model.target_scaling);
            if (model.approximator == rom::ApproximatorKind::ann) {
                auto z_val = rom::encode_split(model, set, store::Split::validation);
                auto val_pairs = store::stack_training_pairs(set, store::Split::validation, z_val,
                                                             model.target_scaling);
                auto result = neural::train_regressor(
                    train_pairs, val_pairs, static_cast<int>(model.input_scaling.dims()),
                    static_cast<int>(q), cfg.train);
                result.model.save(approx);
                fs::create_directories(cfg.paths.report_dir);
                io::write_text_atomic(
                    fs::path(cfg.paths.report_dir) / "approximator_history.csv",
                    result.history.csv());
            } else {
                linalg::DenseMatrix centers(train_pairs.size(), model.input_scaling.dims());
                linalg::DenseMatrix values(train_pairs.size(), q);
                for (std::size_t i = 0; i < train_pairs.size(); ++i) {
                    for (std::size_t c = 0; c < centers.cols; ++c)
                        centers(i, c) = train_pairs[i].input[c];
                    for (std::size_t c = 0; c < q; ++c) values(i, c) = train_pairs[i].target[c];
                }
                rbf::Kernel kernel = model.approximator == rom::ApproximatorKind::rbf_linear
                                         ? rbf::Kernel::linear
                                         : rbf::Kernel::cubic;
                rbf::RbfModel fitted = rbf::fit_rbf(centers, values, kernel, cfg.model.rbf_lambda);
                fitted.save(approx);
                fs::create_directories(cfg.paths.report_dir);
                std::ostringstream res;
                res << "max_center_residual\n"
                    << store::format_double(rbf::center_residual(fitted, centers, values)) << "\n";
                io::write_text_atomic(fs::path(cfg.paths.report_dir) / "rbf_residuals.csv",
                                      res.str());
            }
        }
        if (model.approximator == rom::ApproximatorKind::ann)
            model.approx_mlp = neural::Mlp::load(approx);
        else
            model.approx_rbf = rbf::RbfModel::load(approx);
    }
    return model;
}

void cmd_train_approximator(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    assemble_model(cfg, set, /*train_missing=*/true);
}

void cmd_build_rom(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    rom::RomModel model = assemble_model(cfg, set, /*train_missing=*/false);
    model.save(fs::path(cfg.paths.model_dir) / "rom");
}

std::vector<std::pair<double, std::vector<double>>> collect_queries(const RunConfig& cfg,
                                                                    const PredictOptions& opt) {
    std::vector<std::pair<double, std::vector<double>>> queries;
    if (opt.has_query) {
        require(opt.mu.size() == cfg.dataset.mu_ranges.size(), Errc::ConfigError,
                "predict: --mu must match the parameter count");
        queries.emplace_back(opt.t, opt.mu);
    }
    if (!opt.times_file.empty()) {
        std::ifstream in(opt.times_file);
        if (!in) fail(Errc::Io, "predict: cannot open " + opt.times_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<double> vals;
            while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
            require(vals.size() == 1 + cfg.dataset.mu_ranges.size(), Errc::ConfigError,
                    "predict: times file rows need t and every mu component");
            queries.emplace_back(vals[0], std::vector<double>(vals.begin() + 1, vals.end()));
        }
    }
    require(!queries.empty(), Errc::ConfigError,
            "predict: provide --t/--mu or --times-file");
    return queries;
}

void write_field_file(const Field& field, const Grid& grid, double t,
                      std::span<const double> mu, const fs::path& path) {
    io::Writer w(io::Kind::field);
    w.u32(static_cast<std::uint32_t>(grid.nx));
    w.u32(static_cast<std::uint32_t>(grid.ny));
    w.f64(grid.lx);
    w.f64(grid.ly);
    w.f64(t);
    w.u64(mu.size());
    w.f64_array(mu);
    w.f64_array(field.v);
    w.commit(path);
}

void cmd_predict(const RunConfig& cfg, const PredictOptions& opt) {
    cfg.validate();
    auto queries = collect_queries(cfg, opt);
    rom::RomModel model = rom::RomModel::load(fs::path(cfg.paths.model_dir) / "rom");

    fs::create_directories(cfg.paths.report_dir);
    std::ostringstream csv;
    csv << "query,t";
    for (std::size_t c = 0; c < cfg.dataset.mu_ranges.size(); ++c) csv << ",mu" << c;
    csv << ",field_file,extrapolated\n";
    for (std::size_t k = 0; k < queries.size(); ++k) {
        const auto& [t, mu] = queries[k];
        rom::PredictResult pred = rom::predict_field(model, t, mu);
        char name[48];
        std::snprintf(name, sizeof(name), "predict_%03zu.field", k);
        write_field_file(pred.field, model.grid, t, mu, fs::path(cfg.paths.report_dir) / name);
        csv << k << "," << store::format_double(t);
        for (double m : mu) csv << "," << store::format_double(m);
        csv << "," << name << "," << (pred.extrapolated ? 1 : 0) << "\n";
    }
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "predictions.csv", csv.str());
}

void cmd_evaluate(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    rom::RomModel model = rom::RomModel::load(fs::path(cfg.paths.model_dir) / "rom");

    std::ostringstream metrics, series;
    metrics << "run_id";
    for (std::size_t c = 0; c < cfg.dataset.mu_ranges.size(); ++c) metrics << ",mu" << c;
    metrics << ",model,n_steps,mse,max_diff\n";
    series << "run_id,step,t,step_mse,moving_avg_50\n";

    for (std::size_t i : set.indices_of(store::Split::test)) {
        const auto& run = set.runs[i];
        rom::TrajectoryMetrics m = rom::trajectory_metrics(model, run);
        metrics << run_id(i);
        for (double mu : run.mu) metrics << "," << store::format_double(mu);
        metrics << "," << model.name << "," << run.steps() << ","
                << store::format_double(m.mse) << "," << store::format_double(m.max_diff) << "\n";

        auto avg = rom::moving_average_mse(m.per_step_mse, 50);
        for (std::size_t k = 0; k < m.per_step_mse.size(); ++k)
            series << run_id(i) << "," << k << "," << store::format_double(run.timestamps[k])
                   << "," << store::format_double(m.per_step_mse[k]) << ","
                   << store::format_double(avg[k]) << "\n";
    }
    fs::create_directories(cfg.paths.report_dir);
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "metrics.csv", metrics.str());
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "metrics_series.csv", series.str());
}

void cmd_diagnose(const RunConfig& cfg) {
    cfg.validate();
    store::SnapshotSet set = load_set(cfg);
    auto test_idx = set.indices_of(store::Split::test);
    require(!test_idx.empty(), Errc::EmptySplit, "diagnose: empty test split");

    std::vector<int> labels;
    std::vector<double> times;
    std::size_t rows = 0;
    for (std::size_t i : test_idx) rows += set.runs[i].steps();
    linalg::DenseMatrix x(rows, set.grid.cells());
    std::size_t r = 0;
    for (std::size_t i : test_idx) {
        const auto& run = set.runs[i];
        for (std::size_t k = 0; k < run.steps(); ++k, ++r) {
            auto norm = store::normalize(run.temperature[k].v, set.temp_lo, set.temp_hi);
            std::copy(norm.begin(), norm.end(), &x.a[r * x.cols]);
            labels.push_back(static_cast<int>(i));
            times.push_back(run.timestamps[k]);
        }
    }

    fs::create_directories(cfg.paths.report_dir);

    diagnostics::PcaResult pca = diagnostics::pca_embed(x, 2);
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "pca.csv",
                          diagnostics::embedding_csv(pca.scores, labels, times, "pca", "-"));
    std::ostringstream var;
    var << "component,explained_variance,explained_ratio\n";
    for (std::size_t c = 0; c < pca.explained_ratio.size(); ++c)
        var << c << "," << store::format_double(pca.explained_variance[c]) << ","
            << store::format_double(pca.explained_ratio[c]) << "\n";
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "pca_variance.csv", var.str());

    diagnostics::TsneParams params;
    params.seed = cfg.seed;
    diagnostics::TsneResult tsne = diagnostics::tsne_embed(x, params);
    io::write_text_atomic(
        fs::path(cfg.paths.report_dir) / "tsne.csv",
        diagnostics::embedding_csv(tsne.embedding, labels, times, "tsne",
                                   diagnostics::tsne_params_hash(params)));
    std::ostringstream kl;
    kl << "checkpoint,kl\n";
    for (std::size_t k = 0; k < tsne.kl_history.size(); ++k)
        kl << k << "," << store::format_double(tsne.kl_history[k]) << "\n";
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "tsne_kl.csv", kl.str());

    auto decay = pod::normalized_eigenvalues(set, cfg.model.n_int);
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "eigen_decay.csv",
                          pod::eigenvalue_csv(decay));
}

void cmd_benchmark(const RunConfig& cfg) {
    cfg.validate();
    rom::RomModel model = rom::RomModel::load(fs::path(cfg.paths.model_dir) / "rom");
    std::vector<double> mu;
    for (const auto& range : cfg.dataset.mu_ranges) {
        if (range.log10)
            mu.push_back(std::pow(10.0, 0.5 * (std::log10(range.lo) + std::log10(range.hi))));
        else
            mu.push_back(0.5 * (range.lo + range.hi));
    }
    rom::SpeedupReport report = rom::benchmark_speedup(model, cfg.scenario, cfg.solver, mu);
    fs::create_directories(cfg.paths.report_dir);
    io::write_text_atomic(fs::path(cfg.paths.report_dir) / "timing.csv", report.csv());
}

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::NonFinite: return "NonFinite";
        case Errc::NoConvergence: return "NoConvergence";
        case Errc::NotSpd: return "NotSPD";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::UnsupportedOrder: return "UnsupportedOrder";
        case Errc::NonPositive: return "NonPositive";
        case Errc::DomainMismatch: return "DomainMismatch";
        case Errc::EmptySplit: return "EmptySplit";
        case Errc::EmptyData: return "EmptyData";
        case Errc::InsufficientRuns: return "InsufficientRuns";
        case Errc::SingularSystem: return "SingularSystem";
        case Errc::PerplexityInfeasible: return "PerplexityInfeasible";
        case Errc::Io: return "Io";
        case Errc::BadMagic: return "BadMagic";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::TruncatedFile: return "TruncatedFile";
        case Errc::CrcMismatch: return "CrcMismatch";
        case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

} // namespace

int exit_code_for(Errc c) {
    switch (c) {
        case Errc::ConfigError:
        case Errc::UnsupportedOrder:
        case Errc::NonPositive:
            return 2;
        case Errc::Io:
        case Errc::BadMagic:
        case Errc::VersionMismatch:
        case Errc::TruncatedFile:
        case Errc::CrcMismatch:
            return 5;
        case Errc::NoConvergence:
        case Errc::NonFinite:
        case Errc::NotSpd:
        case Errc::SingularSystem:
        case Errc::PerplexityInfeasible:
            return 4;
        default:
            return 3;
    }
}

void run_command(const std::string& command, const RunConfig& config,
                 const PredictOptions& predict) {
    if (command == "generate") cmd_generate(config);
    else if (command == "split") cmd_split(config);
    else if (command == "train-pod") cmd_train_pod(config);
    else if (command == "train-ae") cmd_train_ae(config);
    else if (command == "train-approximator") cmd_train_approximator(config);
    else if (command == "build-rom") cmd_build_rom(config);
    else if (command == "predict") cmd_predict(config, predict);
    else if (command == "evaluate") cmd_evaluate(config);
    else if (command == "diagnose") cmd_diagnose(config);
    else if (command == "benchmark") cmd_benchmark(config);
    else fail(Errc::ConfigError, "unknown command '" + command + "'");
}

int dispatch(const std::string& command, const RunConfig& config, const PredictOptions& predict) {
    try {
        run_command(command, config, predict);
        return 0;
    } catch (const Error& e) {
        int code = exit_code_for(e.code());
        std::cerr << "error kind=" << errc_name(e.code()) << " exit=" << code
                  << " msg=\"" << e.what() << "\"\n";
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error kind=Internal exit=1 msg=\"" << e.what() << "\"\n";
        return 1;
    }
}

} // namespace rpom::cli
