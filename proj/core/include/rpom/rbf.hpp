#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "rpom/linalg.hpp"

namespace rpom::rbf {

enum class Kernel { linear, cubic };

double kernel_value(Kernel k, double r);

/// Direct radial-basis interpolant without a polynomial tail:
/// z_q(x) = sum_i W[i][q] * phi(|x - center_i|).
struct RbfModel {
    Kernel kernel = Kernel::linear;
    linalg::DenseMatrix centers;  // K x D
    linalg::DenseMatrix weights;  // K x Q
    double lambda = 0.0;

    std::size_t center_count() const { return centers.rows; }
    std::size_t in_dim() const { return centers.cols; }
    std::size_t out_dim() const { return weights.cols; }

    void save(const std::filesystem::path& path) const;
    static RbfModel load(const std::filesystem::path& path);
};

/// Solve (Phi + lambda I) W = Z. Cholesky is attempted first and the solve
/// falls back to partially pivoted LU when the kernel matrix is indefinite
/// (always the case for the linear kernel's zero diagonal).
RbfModel fit_rbf(const linalg::DenseMatrix& centers, const linalg::DenseMatrix& values,
                 Kernel kernel, double lambda = 0.0);

std::vector<double> eval_rbf(const RbfModel& model, std::span<const double> x);

/// Max interpolation residual over the training centers.
double center_residual(const RbfModel& model, const linalg::DenseMatrix& centers,
                       const linalg::DenseMatrix& values);

} // namespace rpom::rbf
