#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "rpom/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"rpom: reduced-order modeling for natural convection in porous media"};
    app.require_subcommand(1);

    std::string config_path = "rpom.cfg";
    std::string times_file;
    double t_query = 0.0;
    std::vector<double> mu_query;

    const std::vector<std::string> commands = {
        "generate", "split",   "train-pod", "train-ae", "train-approximator",
        "build-rom", "predict", "evaluate",  "diagnose", "benchmark"};

    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("-c,--config", config_path, "Path to the run configuration")
            ->capture_default_str();
        if (name == "predict") {
            sub->add_option("--t", t_query, "Query time");
            sub->add_option("--mu", mu_query, "Query parameter vector");
            sub->add_option("--times-file", times_file,
                            "CSV of queries, one `t,mu0[,mu1...]` row per line");
        }
    }

    CLI11_PARSE(app, argc, argv);
    CLI::App* sub = app.get_subcommands().front();

    try {
        rpom::cli::RunConfig config = rpom::cli::load_config(config_path);
        rpom::cli::PredictOptions predict;
        if (sub->get_name() == "predict") {
            predict.has_query = sub->count("--t") > 0;
            predict.t = t_query;
            predict.mu = mu_query;
            predict.times_file = times_file;
        }
        return rpom::cli::dispatch(sub->get_name(), config, predict);
    } catch (const rpom::Error& e) {
        int code = rpom::cli::exit_code_for(e.code());
        std::cerr << "error exit=" << code << " msg=\"" << e.what() << "\"\n";
        return code;
    }
}
