#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rpom/error.hpp"

namespace rpom::linalg {

/// Dense row-major matrix of 64-bit reals.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool finite() const;
    double frobenius_norm() const;

    /// Column c as a vector copy.
    std::vector<double> column(std::size_t c) const;
};

DenseMatrix transpose(const DenseMatrix& m);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
std::vector<double> matvec(const DenseMatrix& a, std::span<const double> x);

struct SvdOptions {
    int max_sweeps = 64;       // one-sided Jacobi iteration budget
    double tol = 1e-14;        // relative off-diagonal rotation threshold
};

/// Thin SVD A = U diag(sigma) V^T with r = min(rows, cols) triplets.
/// U: rows x r, V: cols x r, sigma descending (trailing zeros possible).
/// Rank-deficient inputs get their null-space columns of U/V completed to an
/// orthonormal set, and each singular vector is sign-fixed so its
/// largest-magnitude U entry is positive.
struct SvdResult {
    DenseMatrix u;
    std::vector<double> sigma;
    DenseMatrix v;
};

SvdResult thin_svd(const DenseMatrix& a, const SvdOptions& opts = {});

/// Solve A x = b for symmetric positive-definite A via Cholesky.
std::vector<double> solve_spd(const DenseMatrix& a, std::span<const double> b);
DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b);

/// Solve A x = b by LU with partial pivoting (general square A).
std::vector<double> solve_lu(const DenseMatrix& a, std::span<const double> b);
DenseMatrix solve_lu(const DenseMatrix& a, const DenseMatrix& b);

} // namespace rpom::linalg
