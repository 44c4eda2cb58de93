#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rpom/fom.hpp"
#include "rpom/neural.hpp"
#include "rpom/store.hpp"

namespace rpom::cli {

struct ModelConfig {
    std::string path = "linear";       // linear | nonlinear
    std::size_t n_int = 8;
    std::size_t n = 8;
    int q = 4;
    std::string approximator = "ann";  // ann | rbf-linear | rbf-cubic
    std::string ae = "conv";           // conv | mlp
    int ae_hidden = 4;
    int ae_dropout_blocks = 0;
    double rbf_lambda = 0.0;
};

struct PathsConfig {
    std::string data_dir = "data";
    std::string model_dir = "model";
    std::string report_dir = "reports";
};

struct RunConfig {
    std::uint64_t seed = 0;
    fom::Scenario scenario;
    fom::SolverParams solver;
    store::DatasetSpec dataset;
    ModelConfig model;
    neural::TrainConfig train;     // regressor / approximator training
    neural::TrainConfig train_ae;  // autoencoder training
    PathsConfig paths;
    int jobs = 1;

    void validate() const;
};

/// Parse the flat-sectioned key-value config text. Unknown keys are a
/// ConfigError; RPOM_SEED in the environment overrides `seed`.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

struct PredictOptions {
    bool has_query = false;
    double t = 0.0;
    std::vector<double> mu;
    std::string times_file;  // CSV rows: t,mu0[,mu1...]
};

/// Run one subcommand; throws rpom::Error on failure.
void run_command(const std::string& command, const RunConfig& config,
                 const PredictOptions& predict = {});

/// run_command wrapped with the fixed exit-code mapping; prints a
/// machine-readable error line to stderr on failure.
int dispatch(const std::string& command, const RunConfig& config,
             const PredictOptions& predict = {});

int exit_code_for(Errc code);

} // namespace rpom::cli
