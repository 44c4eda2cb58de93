#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rpom/fom.hpp"
#include "rpom/grid.hpp"

namespace rpom::store {

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

const char* split_name(Split s);

/// Per-component affine map onto [0,1], optionally through log10 first.
/// Bounds are stored in the (possibly log-transformed) space so inversion is
/// exact; a degenerate component (hi == lo) maps to 0 and unscales to lo.
struct ComponentScaling {
    std::vector<double> lo;
    std::vector<double> hi;
    std::vector<std::uint8_t> log10;

    std::size_t dims() const { return lo.size(); }
    std::vector<double> scale(std::span<const double> x) const;
    std::vector<double> unscale(std::span<const double> y) const;

    static ComponentScaling from_samples(const std::vector<std::vector<double>>& samples,
                                         const std::vector<std::uint8_t>& log_flags);
};

/// out = (x - lo) / (hi - lo); a constant range (hi == lo) maps to all zeros.
std::vector<double> normalize(std::span<const double> field, double lo, double hi);
std::vector<double> denormalize(std::span<const double> field, double lo, double hi);

struct MuRange {
    double lo = 0.0;
    double hi = 0.0;
    bool log10 = false;
};

struct DatasetSpec {
    int m_train = 0;
    int m_validation = 0;
    int m_test = 0;
    std::vector<MuRange> mu_ranges;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Planned (mu, split) list: training points equispaced over the admissible
/// range (log-spaced where flagged, tensor grid for multiple parameters),
/// validation/test drawn seeded-uniform and disjoint from every other sample.
struct SamplePlan {
    std::vector<std::vector<double>> mu;
    std::vector<Split> split;
};

SamplePlan plan_parameter_samples(const DatasetSpec& spec);

struct SnapshotSet {
    Grid grid;
    std::vector<fom::Trajectory> runs;
    std::vector<Split> splits;
    std::vector<std::uint8_t> mu_log;
    double temp_lo = 0.0;   // field normalization bounds, train split only
    double temp_hi = 0.0;

    std::vector<std::size_t> indices_of(Split s) const;
    std::size_t min_steps(Split s) const;

    /// (t, mu) scaling with bounds taken from the train split.
    ComponentScaling input_scaling() const;

    /// Recompute temp_lo/temp_hi from the train split.
    void compute_bounds();
};

/// Label trajectories against the dataset plan (matched by mu) and compute
/// train-split bounds. Throws InsufficientRuns when a planned sample has no
/// matching trajectory.
SnapshotSet split_set(std::vector<fom::Trajectory> runs, const DatasetSpec& spec);

struct TrainingPair {
    std::vector<double> input;   // scaled (t, mu)
    std::vector<double> target;
};

/// One pair per stored snapshot of the chosen split, targets = normalized
/// flattened temperature fields.
std::vector<TrainingPair> stack_training_pairs(const SnapshotSet& set, Split which);

/// Latent-target variant; `latents` are aligned with the (run, step)
/// enumeration order of the split and get scaled by `target_scaling`.
std::vector<TrainingPair> stack_training_pairs(const SnapshotSet& set, Split which,
                                               const std::vector<std::vector<double>>& latents,
                                               const ComponentScaling& target_scaling);

/// Bilinear resampling between uniform grids covering the same domain.
/// Sample coordinates are clamped to the source cell-center hull, so outputs
/// are convex combinations of source values.
Field regrid_bilinear(const Field& src, const Grid& src_grid, const Grid& dst_grid);

void write_trajectory(const fom::Trajectory& traj, const std::filesystem::path& path);
fom::Trajectory read_trajectory(const std::filesystem::path& path);

/// CSV rows: run id, mu components, split, number of stored snapshots.
std::string split_manifest_csv(const SnapshotSet& set, std::span<const std::string> run_ids);

/// Round-trip-exact decimal rendering used by every CSV writer.
std::string format_double(double v);

} // namespace rpom::store
