#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "rpom/cli.hpp"
#include "rpom/io.hpp"
#include "rpom/rom.hpp"

using namespace rpom;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

cli::RunConfig tiny_config(const fs::path& root, const std::string& path_kind = "linear") {
    cli::RunConfig cfg;
    cfg.seed = 33;
    cfg.scenario = fom::Scenario::heated_side(8, 8);
    cfg.solver.t_end = 2e-3;
    cfg.solver.dt0 = 2e-4;
    cfg.solver.dt_max = 5e-4;
    cfg.dataset.m_train = 3;
    cfg.dataset.m_validation = 1;
    cfg.dataset.m_test = 1;
    cfg.dataset.mu_ranges = {{40.0, 80.0, false}};
    cfg.dataset.seed = cfg.seed;
    cfg.model.path = path_kind;
    cfg.model.n_int = 3;
    cfg.model.n = 3;
    cfg.model.q = 2;
    cfg.model.ae_hidden = 2;
    cfg.model.approximator = path_kind == "linear" ? "ann" : "rbf-linear";
    cfg.train.epochs = 40;
    cfg.train.eta_max = 2e-3;
    cfg.train.seed = cfg.seed;
    cfg.train_ae.epochs = 6;
    cfg.train_ae.eta_max = 1e-3;
    cfg.train_ae.schedule = neural::LrSchedule::cosine;
    cfg.train_ae.seed = cfg.seed;
    cfg.paths.data_dir = (root / "data").string();
    cfg.paths.model_dir = (root / "model").string();
    cfg.paths.report_dir = (root / "reports").string();
    return cfg;
}

fs::path fresh_root(const std::string& name) {
    fs::path root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

} // namespace

TEST_CASE("config text parses into a consistent RunConfig") {
    std::string text = R"(
# Example-1-style run at desk scale
seed = 7

[scenario]
name = heated_side
nx = 16
ny = 16

[solver]
cfl = 0.5
dt0 = 1e-4
dt_max = 1e-3
bdf_order = 2
t_end = 0.02

[dataset]
m_train = 6
m_validation = 2
m_test = 2
mu0 = 40:80

[model]
path = linear
n_int = 8
n = 8

[train]
epochs = 500
batch_size = 32
lr = 1e-3

[paths]
data_dir = d
model_dir = m
report_dir = r
)";
    cli::RunConfig cfg = cli::parse_config(text);
    CHECK(cfg.seed == 7);
    CHECK(cfg.scenario.name == "heated_side");
    CHECK(cfg.scenario.grid.nx == 16);
    CHECK(cfg.solver.t_end == doctest::Approx(0.02));
    CHECK(cfg.dataset.m_train == 6);
    CHECK(cfg.dataset.mu_ranges[0].lo == 40.0);
    CHECK(cfg.dataset.mu_ranges[0].hi == 80.0);
    CHECK(cfg.model.n == 8);
    CHECK(cfg.train.epochs == 500);
    CHECK(cfg.paths.data_dir == "d");
    CHECK(cfg.dataset.seed == 7);  // seed propagates

    // n defaults to n_int when not given
    cli::RunConfig defaulted = cli::parse_config("[model]\nn_int = 16");
    CHECK(defaulted.model.n == 16);
    cli::RunConfig both = cli::parse_config("[model]\nn_int = 16\nn = 4");
    CHECK(both.model.n == 4);

    CHECK_THROWS_AS(cli::parse_config("nonsense = 1"), Error);
    CHECK_THROWS_AS(cli::parse_config("[solver]\nbogus_key = 2"), Error);
}

TEST_CASE("log-scaled parameter ranges and RPOM_SEED override") {
    std::string text = R"(
seed = 1
[dataset]
m_train = 4
m_validation = 1
m_test = 1
mu0 = 350:450
mu1 = 0.001:100:log
)";
    cli::RunConfig cfg = cli::parse_config(text);
    CHECK(cfg.dataset.mu_ranges.size() == 2);
    CHECK(cfg.dataset.mu_ranges[1].log10);

    setenv("RPOM_SEED", "4242", 1);
    cli::RunConfig seeded = cli::parse_config(text);
    unsetenv("RPOM_SEED");
    CHECK(seeded.seed == 4242);
    CHECK(seeded.dataset.seed == 4242);
}

TEST_CASE("generate writes one trajectory per planned sample plus a manifest") {
    fs::path root = fresh_root("rpom_cli_generate");
    cli::RunConfig cfg = tiny_config(root);

    CHECK(cli::dispatch("generate", cfg) == 0);
    for (int i = 0; i < 5; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03d.traj", i);
        CHECK(fs::exists(fs::path(cfg.paths.data_dir) / name));
    }
    std::string manifest = read_file(fs::path(cfg.paths.data_dir) / "runs.csv");
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 6);  // header + 5 rows
}

TEST_CASE("generate output is byte-identical to direct library invocation") {
    fs::path root_a = fresh_root("rpom_cli_direct_a");
    fs::path root_b = fresh_root("rpom_cli_direct_b");
    cli::RunConfig cfg = tiny_config(root_a);
    CHECK(cli::dispatch("generate", cfg) == 0);

    // direct library calls with the same config and seed
    auto plan = store::plan_parameter_samples(cfg.dataset);
    fs::create_directories(root_b / "data");
    for (std::size_t i = 0; i < plan.mu.size(); ++i) {
        fom::Trajectory traj = fom::run_simulation(cfg.scenario, cfg.solver, plan.mu[i]);
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03zu.traj", i);
        store::write_trajectory(traj, root_b / "data" / name);
    }
    for (std::size_t i = 0; i < plan.mu.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03zu.traj", i);
        CHECK(read_file(fs::path(cfg.paths.data_dir) / name) ==
              read_file(root_b / "data" / name));
    }
}

TEST_CASE("generate fan-out across workers changes nothing") {
    fs::path root_a = fresh_root("rpom_cli_jobs1");
    fs::path root_b = fresh_root("rpom_cli_jobs4");
    cli::RunConfig cfg_a = tiny_config(root_a);
    cli::RunConfig cfg_b = tiny_config(root_b);
    cfg_b.jobs = 4;
    CHECK(cli::dispatch("generate", cfg_a) == 0);
    CHECK(cli::dispatch("generate", cfg_b) == 0);
    for (int i = 0; i < 5; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03d.traj", i);
        CHECK(read_file(fs::path(cfg_a.paths.data_dir) / name) ==
              read_file(fs::path(cfg_b.paths.data_dir) / name));
    }
}

TEST_CASE("full linear pipeline through the CLI surface") {
    fs::path root = fresh_root("rpom_cli_linear");
    cli::RunConfig cfg = tiny_config(root);

    REQUIRE(cli::dispatch("generate", cfg) == 0);
    std::string run0_bytes = read_file(fs::path(cfg.paths.data_dir) / "run_000.traj");
    REQUIRE(cli::dispatch("split", cfg) == 0);
    std::string splits = read_file(fs::path(cfg.paths.data_dir) / "splits.csv");
    CHECK(splits.find("run_id,mu0,split,n_steps") == 0);
    CHECK(splits.find("train") != std::string::npos);
    CHECK(splits.find("validation") != std::string::npos);
    CHECK(splits.find("test") != std::string::npos);

    REQUIRE(cli::dispatch("train-pod", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "basis.rpom"));
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "eigen_decay.csv"));

    REQUIRE(cli::dispatch("train-approximator", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "regressor.rpom"));

    REQUIRE(cli::dispatch("build-rom", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "rom" / "manifest.txt"));

    cli::PredictOptions predict;
    predict.has_query = true;
    predict.t = 1e-3;
    predict.mu = {60.0};
    REQUIRE(cli::dispatch("predict", cfg, predict) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "predict_000.field"));
    std::string predictions = read_file(fs::path(cfg.paths.report_dir) / "predictions.csv");
    CHECK(std::count(predictions.begin(), predictions.end(), '\n') == 2);

    // predict through the library gives the same field bytes
    rom::RomModel model = rom::RomModel::load(fs::path(cfg.paths.model_dir) / "rom");
    auto direct = rom::predict_field(model, predict.t, predict.mu);
    io::Reader r(fs::path(cfg.paths.report_dir) / "predict_000.field");
    r.expect_kind(io::Kind::field);
    r.u32(); r.u32(); r.f64(); r.f64(); r.f64();
    std::size_t mu_len = r.u64();
    r.f64_array(mu_len);
    auto stored = r.f64_array(model.grid.cells());
    CHECK(stored == direct.field.v);

    REQUIRE(cli::dispatch("evaluate", cfg) == 0);
    std::string metrics = read_file(fs::path(cfg.paths.report_dir) / "metrics.csv");
    CHECK(metrics.find("run_id,mu0,model,n_steps,mse,max_diff") == 0);

    // per-mu MSE matches an in-process recomputation bitwise
    store::SnapshotSet set = store::split_set(
        [&] {
            std::vector<fom::Trajectory> runs;
            for (int i = 0; i < 5; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "run_%03d.traj", i);
                runs.push_back(store::read_trajectory(fs::path(cfg.paths.data_dir) / name));
            }
            return runs;
        }(),
        cfg.dataset);
    std::size_t test_index = set.indices_of(store::Split::test)[0];
    rom::TrajectoryMetrics m = rom::trajectory_metrics(model, set.runs[test_index]);
    CHECK(metrics.find(store::format_double(m.mse)) != std::string::npos);
    CHECK(metrics.find(store::format_double(m.max_diff)) != std::string::npos);

    // evaluate twice: byte-identical artifacts (idempotent, atomic rewrite)
    std::string first = read_file(fs::path(cfg.paths.report_dir) / "metrics.csv");
    REQUIRE(cli::dispatch("evaluate", cfg) == 0);
    CHECK(read_file(fs::path(cfg.paths.report_dir) / "metrics.csv") == first);

    REQUIRE(cli::dispatch("diagnose", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "pca.csv"));
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "tsne.csv"));

    // embedding labels join back to the split manifest: every labelled
    // trajectory id is a test-split run in splits.csv
    {
        std::istringstream pca(read_file(fs::path(cfg.paths.report_dir) / "pca.csv"));
        std::string line;
        std::getline(pca, line);  // header
        while (std::getline(pca, line)) {
            std::string id = "run_00" + line.substr(0, line.find(','));
            std::string row = splits.substr(splits.find(id));
            row = row.substr(0, row.find('\n'));
            CHECK(row.find("test") != std::string::npos);
        }
    }

    // batch queries through a times file
    {
        fs::path times = root / "queries.csv";
        std::ofstream out(times);
        out << "5e-4,45\n1.5e-3,75\n";
        out.close();
        cli::PredictOptions batch;
        batch.times_file = times.string();
        REQUIRE(cli::dispatch("predict", cfg, batch) == 0);
        CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "predict_000.field"));
        CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "predict_001.field"));
        std::string rows = read_file(fs::path(cfg.paths.report_dir) / "predictions.csv");
        CHECK(std::count(rows.begin(), rows.end(), '\n') == 3);
    }

    REQUIRE(cli::dispatch("benchmark", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "timing.csv"));

    // append-only artifact graph: no later stage touched the snapshots
    CHECK(read_file(fs::path(cfg.paths.data_dir) / "run_000.traj") == run0_bytes);
}

TEST_CASE("full nonlinear pipeline through the CLI surface") {
    fs::path root = fresh_root("rpom_cli_nonlinear");
    cli::RunConfig cfg = tiny_config(root, "nonlinear");
    cfg.scenario = fom::Scenario::heated_side(16, 16);

    REQUIRE(cli::dispatch("generate", cfg) == 0);
    REQUIRE(cli::dispatch("train-ae", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "autoencoder.rpom"));
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "ae_history.csv"));

    REQUIRE(cli::dispatch("train-approximator", cfg) == 0);
    CHECK(fs::exists(fs::path(cfg.paths.model_dir) / "approximator.rpom"));
    CHECK(fs::exists(fs::path(cfg.paths.report_dir) / "rbf_residuals.csv"));

    REQUIRE(cli::dispatch("build-rom", cfg) == 0);
    REQUIRE(cli::dispatch("evaluate", cfg) == 0);
    std::string metrics = read_file(fs::path(cfg.paths.report_dir) / "metrics.csv");
    CHECK(metrics.find("AE 2 z: L-RBF") != std::string::npos);
}

TEST_CASE("train commands are bitwise deterministic given the seed") {
    fs::path root_a = fresh_root("rpom_cli_det_a");
    fs::path root_b = fresh_root("rpom_cli_det_b");
    for (const fs::path* root : {&root_a, &root_b}) {
        cli::RunConfig cfg = tiny_config(*root);
        REQUIRE(cli::dispatch("generate", cfg) == 0);
        REQUIRE(cli::dispatch("train-pod", cfg) == 0);
        REQUIRE(cli::dispatch("train-approximator", cfg) == 0);
        REQUIRE(cli::dispatch("build-rom", cfg) == 0);
    }
    for (const char* rel :
         {"model/basis.rpom", "model/regressor.rpom", "model/rom/manifest.txt"}) {
        CHECK(read_file(root_a / rel) == read_file(root_b / rel));
    }
}

TEST_CASE("error paths map onto the documented exit codes") {
    fs::path root = fresh_root("rpom_cli_errors");
    cli::RunConfig cfg = tiny_config(root);

    CHECK(cli::dispatch("no-such-command", cfg) == 2);

    cli::PredictOptions empty;
    CHECK(cli::dispatch("predict", cfg, empty) == 2);  // no query given

    // evaluate before anything exists: missing trajectories -> data error
    CHECK(cli::dispatch("evaluate", cfg) == 3);

    // corrupt model bundle -> io error
    REQUIRE(cli::dispatch("generate", cfg) == 0);
    REQUIRE(cli::dispatch("train-pod", cfg) == 0);
    REQUIRE(cli::dispatch("train-approximator", cfg) == 0);
    REQUIRE(cli::dispatch("build-rom", cfg) == 0);
    fs::remove(fs::path(cfg.paths.model_dir) / "rom" / "manifest.txt");
    CHECK(cli::dispatch("evaluate", cfg) == 5);
}
