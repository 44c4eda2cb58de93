#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rpom/linalg.hpp"
#include "rpom/store.hpp"

namespace rpom::pod {

/// Orthonormal spatial modes (columns) under the uniform-cell-area-weighted
/// inner product, with the stage-2 singular-value spectrum retained.
struct ReducedBasis {
    linalg::DenseMatrix modes;            // dofs x n_modes
    std::vector<double> singular_values;  // full stage-2 spectrum, descending
    std::size_t n_int = 0;
    double weight = 1.0;                  // inner-product cell area
    bool rank_deficient = false;
    std::string provenance;

    std::size_t dofs() const { return modes.rows; }
    std::size_t n_modes() const { return modes.cols; }

    void save(const std::filesystem::path& path) const;
    static ReducedBasis load(const std::filesystem::path& path);
};

/// Two-stage nested POD over the train split: per-run SVD keeping n_int left
/// vectors scaled by their singular values, then an SVD of the horizontally
/// stacked compressed matrices keeping n leading modes. When fewer than n
/// nonzero singular values exist, the achievable rank is returned with
/// rank_deficient set.
ReducedBasis nested_pod(const store::SnapshotSet& set, std::size_t n_int, std::size_t n);

/// L2-projection coefficients; with orthonormal modes this is the weighted
/// inner product against each mode.
std::vector<double> project_l2(const ReducedBasis& basis, std::span<const double> field);

/// field = sum_k theta_k * mode_k.
std::vector<double> reconstruct_linear(const ReducedBasis& basis, std::span<const double> theta);

/// Stage-2 singular values squared, normalized by the largest.
std::vector<double> normalized_eigenvalues(const store::SnapshotSet& set, std::size_t n_int);

/// CSV: index,normalized_eigenvalue.
std::string eigenvalue_csv(std::span<const double> normalized);

} // namespace rpom::pod
