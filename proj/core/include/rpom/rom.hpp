#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rpom/fom.hpp"
#include "rpom/neural.hpp"
#include "rpom/pod.hpp"
#include "rpom/rbf.hpp"
#include "rpom/store.hpp"

namespace rpom::rom {

enum class RomKind { linear, nonlinear };
enum class ApproximatorKind { ann, rbf_linear, rbf_cubic };
enum class AeKind { conv, mlp };

const char* approximator_name(ApproximatorKind k);

/// Deployable online model: either {reduced basis + theta regressor} or
/// {decoder + (t,mu) -> z approximator}, with every scaling needed to answer
/// raw-unit queries.
struct RomModel {
    RomKind kind = RomKind::linear;
    std::string name;  // e.g. "POD 16 RB" or "AE 4 z: ANN"
    Grid grid;
    store::ComponentScaling input_scaling;   // (t, mu)
    store::ComponentScaling target_scaling;  // theta or z components
    double field_lo = 0.0;  // temperature normalization bounds (train split)
    double field_hi = 1.0;

    std::optional<pod::ReducedBasis> basis;
    std::optional<neural::Mlp> regressor;

    AeKind ae_kind = AeKind::conv;
    std::optional<neural::ConvAe> conv_ae;
    std::optional<neural::MlpAe> mlp_ae;
    ApproximatorKind approximator = ApproximatorKind::ann;
    std::optional<neural::Mlp> approx_mlp;
    std::optional<rbf::RbfModel> approx_rbf;

    /// Bundle directory: component checkpoints plus a key-value manifest.
    void save(const std::filesystem::path& dir) const;
    static RomModel load(const std::filesystem::path& dir);
};

struct PredictResult {
    Field field;
    bool extrapolated = false;  // scaled query left the unit box
};

/// Online query at arbitrary (t, mu); t need not match any FOM timestamp.
PredictResult predict_field(const RomModel& model, double t, std::span<const double> mu);

/// Pointwise |a - b|.
Field diff_field(const Field& fom_field, const Field& rom_field);

struct TrajectoryMetrics {
    double mse = 0.0;       // mean over steps of mean-over-DOF squared error
    double max_diff = 0.0;  // sup over steps and DOFs
    std::vector<double> per_step_mse;
};

TrajectoryMetrics trajectory_metrics(const RomModel& model, const fom::Trajectory& traj);

/// Trailing mean over the last min(window, k) entries at position k.
std::vector<double> moving_average_mse(std::span<const double> series, std::size_t window = 50);

/// theta per train/validation snapshot by L2 projection of the raw fields,
/// in the (run, step) enumeration order used by stack_training_pairs.
std::vector<std::vector<double>> project_split(const pod::ReducedBasis& basis,
                                               const store::SnapshotSet& set, store::Split which);

/// Latent codes of the normalized snapshots of a split.
std::vector<std::vector<double>> encode_split(const RomModel& model,
                                              const store::SnapshotSet& set, store::Split which);

/// Normalized flattened temperature snapshots of a split (AE training data).
std::vector<std::vector<double>> normalized_fields(const store::SnapshotSet& set,
                                                   store::Split which);

RomModel build_linear_rom(const store::SnapshotSet& set, std::size_t n_int, std::size_t n,
                          const neural::TrainConfig& regressor_cfg);

RomModel build_nonlinear_rom(const store::SnapshotSet& set, const neural::ConvAeSpec& ae_spec,
                             ApproximatorKind approx, const neural::TrainConfig& ae_cfg,
                             const neural::TrainConfig& approx_cfg, double rbf_lambda = 0.0);

RomModel build_nonlinear_rom(const store::SnapshotSet& set, const neural::MlpAeSpec& ae_spec,
                             ApproximatorKind approx, const neural::TrainConfig& ae_cfg,
                             const neural::TrainConfig& approx_cfg, double rbf_lambda = 0.0);

/// Swap the (t,mu) -> z approximator on an already-built nonlinear model.
RomModel swap_approximator(const RomModel& model, const store::SnapshotSet& set,
                           ApproximatorKind approx, const neural::TrainConfig& approx_cfg,
                           double rbf_lambda = 0.0);

struct SpeedupReport {
    double fom_seconds = 0.0;
    std::size_t fom_steps = 0;
    double rom_single_query_seconds = 0.0;
    double rom_replay_seconds = 0.0;

    double ratio_single() const { return fom_seconds / rom_single_query_seconds; }
    double ratio_replay() const { return fom_seconds / rom_replay_seconds; }
    std::string csv() const;
};

/// Wall-clock of one FOM trajectory vs a single ROM query and a
/// full-trajectory replay at the same timestamps.
SpeedupReport benchmark_speedup(const RomModel& model, const fom::Scenario& sc,
                                const fom::SolverParams& params, std::span<const double> mu);

} // namespace rpom::rom
