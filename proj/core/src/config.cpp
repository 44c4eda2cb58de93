#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rpom/cli.hpp"

namespace rpom::cli {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        require(used == v.size(), Errc::ConfigError, "config: bad number for " + key);
        return x;
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail(Errc::ConfigError, "config: bad number for " + key + ": '" + v + "'");
    }
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long x = std::stol(v, &used);
        require(used == v.size(), Errc::ConfigError, "config: bad integer for " + key);
        return x;
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail(Errc::ConfigError, "config: bad integer for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    fail(Errc::ConfigError, "config: bad boolean for " + key + ": '" + v + "'");
}

// "lo:hi" or "lo:hi:log"
store::MuRange parse_range(const std::string& key, const std::string& v) {
    store::MuRange r;
    std::stringstream ss(v);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, ':')) parts.push_back(trim(part));
    require(parts.size() == 2 || parts.size() == 3, Errc::ConfigError,
            "config: expected lo:hi[:log] for " + key);
    r.lo = to_double(key, parts[0]);
    r.hi = to_double(key, parts[1]);
    if (parts.size() == 3) {
        require(parts[2] == "log", Errc::ConfigError, "config: range suffix must be 'log'");
        r.log10 = true;
    }
    return r;
}

// "dirichlet:<value>" or "insulated"
fom::TemperatureBc parse_bc(const std::string& key, const std::string& v) {
    if (v == "insulated") return fom::TemperatureBc::insulated();
    if (v.rfind("dirichlet:", 0) == 0)
        return fom::TemperatureBc::fixed(to_double(key, v.substr(10)));
    fail(Errc::ConfigError, "config: bad boundary condition for " + key + ": '" + v + "'");
}

void apply_train_key(neural::TrainConfig& t, const std::string& key, const std::string& v) {
    if (key == "batch_size") t.batch_size = static_cast<int>(to_long(key, v));
    else if (key == "epochs") t.epochs = to_long(key, v);
    else if (key == "lr" || key == "eta_max") t.eta_max = to_double(key, v);
    else if (key == "eta_min") t.eta_min = to_double(key, v);
    else if (key == "schedule") {
        if (v == "constant") t.schedule = neural::LrSchedule::constant;
        else if (v == "cosine") t.schedule = neural::LrSchedule::cosine;
        else fail(Errc::ConfigError, "config: schedule must be constant or cosine");
    } else if (key == "early_stopping") t.early_stopping = to_bool(key, v);
    else fail(Errc::ConfigError, "config: unknown train key '" + key + "'");
}

} // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    cfg.scenario = fom::Scenario::heated_side(32, 32);
    cfg.train_ae.schedule = neural::LrSchedule::cosine;
    cfg.train_ae.eta_max = 1e-3;
    cfg.train_ae.epochs = 50;

    // Scenario geometry overrides are deferred so nx/ny/name can appear in
    // any order within the [scenario] section.
    std::string scenario_name = "heated_side";
    int nx = 32, ny = 32;
    bool have_lx = false, have_ly = false;
    double lx = 0.0, ly = 0.0;
    bool n_set = false;  // basis size defaults to n_int when never given
    std::vector<std::pair<std::string, std::string>> scenario_keys;

    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        require(eq != std::string::npos, Errc::ConfigError, "config: expected key = value: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));

        if (section.empty()) {
            if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(key, value));
            else if (key == "jobs") cfg.jobs = static_cast<int>(to_long(key, value));
            else fail(Errc::ConfigError, "config: unknown top-level key '" + key + "'");
        } else if (section == "scenario") {
            if (key == "name") scenario_name = value;
            else if (key == "nx") nx = static_cast<int>(to_long(key, value));
            else if (key == "ny") ny = static_cast<int>(to_long(key, value));
            else if (key == "lx") { lx = to_double(key, value); have_lx = true; }
            else if (key == "ly") { ly = to_double(key, value); have_ly = true; }
            else scenario_keys.emplace_back(key, value);
        } else if (section == "solver") {
            auto& s = cfg.solver;
            if (key == "cfl") s.cfl = to_double(key, value);
            else if (key == "dt0") s.dt0 = to_double(key, value);
            else if (key == "dt_max") s.dt_max = to_double(key, value);
            else if (key == "bdf_order") s.bdf_order = static_cast<int>(to_long(key, value));
            else if (key == "t_end") s.t_end = to_double(key, value);
            else if (key == "poisson_tol") s.poisson_tol = to_double(key, value);
            else if (key == "poisson_max_iter")
                s.poisson_max_iter = static_cast<int>(to_long(key, value));
            else if (key == "ra1") s.ra1 = to_double(key, value);
            else if (key == "ra2") s.ra2 = to_double(key, value);
            else if (key == "store_flow") s.store_flow = to_bool(key, value);
            else fail(Errc::ConfigError, "config: unknown solver key '" + key + "'");
        } else if (section == "dataset") {
            auto& d = cfg.dataset;
            if (key == "m_train") d.m_train = static_cast<int>(to_long(key, value));
            else if (key == "m_validation") d.m_validation = static_cast<int>(to_long(key, value));
            else if (key == "m_test") d.m_test = static_cast<int>(to_long(key, value));
            else if (key.rfind("mu", 0) == 0) {
                std::size_t idx = static_cast<std::size_t>(to_long(key, key.substr(2)));
                if (d.mu_ranges.size() <= idx) d.mu_ranges.resize(idx + 1);
                d.mu_ranges[idx] = parse_range(key, value);
            } else fail(Errc::ConfigError, "config: unknown dataset key '" + key + "'");
        } else if (section == "model") {
            auto& m = cfg.model;
            if (key == "path") m.path = value;
            else if (key == "n_int") m.n_int = static_cast<std::size_t>(to_long(key, value));
            else if (key == "n") { m.n = static_cast<std::size_t>(to_long(key, value)); n_set = true; }
            else if (key == "q") m.q = static_cast<int>(to_long(key, value));
            else if (key == "approximator") m.approximator = value;
            else if (key == "ae") m.ae = value;
            else if (key == "ae_hidden") m.ae_hidden = static_cast<int>(to_long(key, value));
            else if (key == "ae_dropout_blocks")
                m.ae_dropout_blocks = static_cast<int>(to_long(key, value));
            else if (key == "rbf_lambda") m.rbf_lambda = to_double(key, value);
            else fail(Errc::ConfigError, "config: unknown model key '" + key + "'");
        } else if (section == "train") {
            apply_train_key(cfg.train, key, value);
        } else if (section == "train_ae") {
            apply_train_key(cfg.train_ae, key, value);
        } else if (section == "paths") {
            if (key == "data_dir") cfg.paths.data_dir = value;
            else if (key == "model_dir") cfg.paths.model_dir = value;
            else if (key == "report_dir") cfg.paths.report_dir = value;
            else fail(Errc::ConfigError, "config: unknown paths key '" + key + "'");
        } else {
            fail(Errc::ConfigError, "config: unknown section [" + section + "]");
        }
    }

    if (scenario_name == "heated_side") cfg.scenario = fom::Scenario::heated_side(nx, ny);
    else if (scenario_name == "elder") cfg.scenario = fom::Scenario::elder(nx, ny);
    else if (scenario_name == "modified_elder") cfg.scenario = fom::Scenario::modified_elder(nx, ny);
    else fail(Errc::ConfigError, "config: unknown scenario '" + scenario_name + "'");
    if (have_lx) cfg.scenario.grid.lx = lx;
    if (have_ly) cfg.scenario.grid.ly = ly;

    for (const auto& [key, value] : scenario_keys) {
        auto& sc = cfg.scenario;
        if (key == "initial_t") sc.initial_temperature = to_double(key, value);
        else if (key == "f_c") sc.source = to_double(key, value);
        else if (key == "bc_left") sc.bc(fom::Side::left) = parse_bc(key, value);
        else if (key == "bc_right") sc.bc(fom::Side::right) = parse_bc(key, value);
        else if (key == "bc_bottom") sc.bc(fom::Side::bottom) = parse_bc(key, value);
        else if (key == "bc_top") sc.bc(fom::Side::top) = parse_bc(key, value);
        else if (key == "heated_lo") {
            sc.bc(fom::Side::bottom).has_segment = true;
            sc.bc(fom::Side::bottom).seg_lo = to_double(key, value);
        } else if (key == "heated_hi") {
            sc.bc(fom::Side::bottom).seg_hi = to_double(key, value);
        } else if (key == "heated_value") {
            sc.bc(fom::Side::bottom).seg_value = to_double(key, value);
        } else if (key == "sub_x0") sc.sub_x0 = to_double(key, value);
        else if (key == "sub_x1") sc.sub_x1 = to_double(key, value);
        else if (key == "sub_y0") sc.sub_y0 = to_double(key, value);
        else if (key == "sub_y1") sc.sub_y1 = to_double(key, value);
        else if (key == "flux_left") sc.normal_flux[0] = to_double(key, value);
        else if (key == "flux_right") sc.normal_flux[1] = to_double(key, value);
        else if (key == "flux_bottom") sc.normal_flux[2] = to_double(key, value);
        else if (key == "flux_top") sc.normal_flux[3] = to_double(key, value);
        else fail(Errc::ConfigError, "config: unknown scenario key '" + key + "'");
    }
    cfg.scenario.validate();

    if (!n_set) cfg.model.n = cfg.model.n_int;

    if (const char* env = std::getenv("RPOM_SEED")) {
        cfg.seed = static_cast<std::uint64_t>(to_long("RPOM_SEED", env));
    }
    cfg.dataset.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train_ae.seed = cfg.seed;
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::Io, "cannot open config: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void RunConfig::validate() const {
    scenario.validate();
    solver.validate();
    dataset.validate();
    train.validate();
    train_ae.validate();
    require(model.path == "linear" || model.path == "nonlinear", Errc::ConfigError,
            "config: model path must be linear or nonlinear");
    require(model.approximator == "ann" || model.approximator == "rbf-linear" ||
                model.approximator == "rbf-cubic",
            Errc::ConfigError, "config: unknown approximator");
    require(model.ae == "conv" || model.ae == "mlp", Errc::ConfigError,
            "config: ae must be conv or mlp");
    require(jobs >= 1, Errc::ConfigError, "config: jobs must be >= 1");
}

} // namespace rpom::cli
