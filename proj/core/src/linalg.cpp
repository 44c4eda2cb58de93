#include "rpom/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rpom::linalg {

bool DenseMatrix::finite() const {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

double DenseMatrix::frobenius_norm() const {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

std::vector<double> DenseMatrix::column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
    return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    require(a.cols == b.rows, Errc::ShapeMismatch,
            "matmul: " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
    DenseMatrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.a[k * b.cols];
            double* crow = &c.a[i * c.cols];
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

std::vector<double> matvec(const DenseMatrix& a, std::span<const double> x) {
    require(a.cols == x.size(), Errc::ShapeMismatch, "matvec dimension mismatch");
    std::vector<double> y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = &a.a[i * a.cols];
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

namespace {

// Orthogonalize column c of m (column-major work array) against columns
// filled so far and the canonical basis; used to complete U/V when the
// input is rank-deficient so the factors stay orthonormal.
void complete_orthonormal_column(std::vector<std::vector<double>>& cols, std::size_t c,
                                 std::size_t dim) {
    for (std::size_t trial = 0; trial < dim; ++trial) {
        std::vector<double> cand(dim, 0.0);
        cand[trial] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {  // twice-is-enough Gram-Schmidt
            for (std::size_t k = 0; k < cols.size(); ++k) {
                if (k == c) continue;
                const auto& w = cols[k];
                double dot = std::inner_product(w.begin(), w.end(), cand.begin(), 0.0);
                for (std::size_t i = 0; i < dim; ++i) cand[i] -= dot * w[i];
            }
        }
        double nrm = std::sqrt(std::inner_product(cand.begin(), cand.end(), cand.begin(), 0.0));
        if (nrm > 0.5) {  // comfortably independent of the span so far
            for (double& x : cand) x /= nrm;
            cols[c] = std::move(cand);
            return;
        }
    }
    fail(Errc::NoConvergence, "thin_svd: could not complete orthonormal basis");
}

// One-sided Jacobi on columns of A (m >= n assumed by caller).
// Returns U (m x n columns, orthonormal after normalization), sigma, V (n x n).
SvdResult jacobi_svd_tall(const DenseMatrix& a, const SvdOptions& opts) {
    const std::size_t m = a.rows, n = a.cols;

    // Column-major working copy: rotations touch full columns.
    std::vector<std::vector<double>> w(n, std::vector<double>(m));
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t r = 0; r < m; ++r) w[c][r] = a(r, c);

    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t c = 0; c < n; ++c) v[c][c] = 1.0;

    bool converged = (n <= 1);
    for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                auto& cp = w[p];
                auto& cq = w[q];
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    alpha += cp[r] * cp[r];
                    beta += cq[r] * cq[r];
                    gamma += cp[r] * cq[r];
                }
                if (std::abs(gamma) <= opts.tol * std::sqrt(alpha * beta)) continue;
                converged = false;

                double zeta = (beta - alpha) / (2.0 * gamma);
                double t = ((zeta >= 0.0) ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double cs = 1.0 / std::sqrt(1.0 + t * t);
                double sn = cs * t;
                for (std::size_t r = 0; r < m; ++r) {
                    double xp = cp[r], xq = cq[r];
                    cp[r] = cs * xp - sn * xq;
                    cq[r] = sn * xp + cs * xq;
                }
                auto& vp = v[p];
                auto& vq = v[q];
                for (std::size_t r = 0; r < n; ++r) {
                    double xp = vp[r], xq = vq[r];
                    vp[r] = cs * xp - sn * xq;
                    vq[r] = sn * xp + cs * xq;
                }
            }
        }
    }
    if (!converged) fail(Errc::NoConvergence, "thin_svd: Jacobi sweep budget exhausted");

    std::vector<double> sigma(n);
    for (std::size_t c = 0; c < n; ++c) {
        double s = std::sqrt(std::inner_product(w[c].begin(), w[c].end(), w[c].begin(), 0.0));
        sigma[c] = s;
    }

    // Descending order.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

    double smax = n ? sigma[perm[0]] : 0.0;
    double rank_tol = smax * 1e-13 * static_cast<double>(std::max(m, n));

    std::vector<std::vector<double>> ucols(n), vcols(n);
    std::vector<double> s_sorted(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t c = perm[k];
        s_sorted[k] = sigma[c];
        vcols[k] = v[c];
        if (sigma[c] > rank_tol) {
            ucols[k] = w[c];
            for (double& x : ucols[k]) x /= sigma[c];
        } else {
            s_sorted[k] = 0.0;
            ucols[k] = std::vector<double>(m, 0.0);  // completed below
        }
    }
    for (std::size_t k = 0; k < n; ++k)
        if (s_sorted[k] == 0.0) complete_orthonormal_column(ucols, k, m);

    SvdResult out;
    out.sigma = std::move(s_sorted);
    out.u = DenseMatrix(m, n);
    out.v = DenseMatrix(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t r = 0; r < m; ++r) out.u(r, c) = ucols[c][r];
        for (std::size_t r = 0; r < n; ++r) out.v(r, c) = vcols[c][r];
    }
    return out;
}

void apply_sign_convention(SvdResult& r) {
    for (std::size_t c = 0; c < r.sigma.size(); ++c) {
        std::size_t imax = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < r.u.rows; ++i) {
            double mag = std::abs(r.u(i, c));
            if (mag > best) {
                best = mag;
                imax = i;
            }
        }
        if (r.u(imax, c) < 0.0) {
            for (std::size_t i = 0; i < r.u.rows; ++i) r.u(i, c) = -r.u(i, c);
            for (std::size_t i = 0; i < r.v.rows; ++i) r.v(i, c) = -r.v(i, c);
        }
    }
}

} // namespace

SvdResult thin_svd(const DenseMatrix& a, const SvdOptions& opts) {
    require(a.rows >= 1 && a.cols >= 1, Errc::ShapeMismatch, "thin_svd: empty matrix");
    require(a.finite(), Errc::NonFinite, "thin_svd: input contains NaN/Inf");

    SvdResult r;
    if (a.rows >= a.cols) {
        r = jacobi_svd_tall(a, opts);
    } else {
        SvdResult t = jacobi_svd_tall(transpose(a), opts);
        r.u = std::move(t.v);
        r.v = std::move(t.u);
        r.sigma = std::move(t.sigma);
    }
    apply_sign_convention(r);
    return r;
}

namespace {

// Lower Cholesky factor; fails with NotSpd on a non-positive pivot.
DenseMatrix cholesky(const DenseMatrix& a) {
    const std::size_t n = a.rows;
    require(a.rows == a.cols, Errc::ShapeMismatch, "solve_spd: matrix not square");
    require(a.finite(), Errc::NonFinite, "solve_spd: input contains NaN/Inf");

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            scale = std::max(scale, std::abs(a(i, j)));
            require(std::abs(a(i, j) - a(j, i)) <= 1e-12 * std::max(1.0, scale),
                    Errc::NotSpd, "solve_spd: matrix not symmetric within 1e-12");
        }

    DenseMatrix l(n, n);
    double pivot_tol = 0.0;
    for (std::size_t i = 0; i < n; ++i) pivot_tol = std::max(pivot_tol, std::abs(a(i, i)));
    pivot_tol = std::max(pivot_tol, 1.0) * 1e-14;

    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > pivot_tol)) fail(Errc::NotSpd, "solve_spd: non-positive Cholesky pivot");
        double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

std::vector<double> cholesky_solve(const DenseMatrix& l, std::span<const double> b) {
    const std::size_t n = l.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

} // namespace

std::vector<double> solve_spd(const DenseMatrix& a, std::span<const double> b) {
    require(b.size() == a.rows, Errc::ShapeMismatch, "solve_spd: rhs length mismatch");
    for (double x : b) require(std::isfinite(x), Errc::NonFinite, "solve_spd: rhs not finite");
    return cholesky_solve(cholesky(a), b);
}

DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b) {
    require(b.rows == a.rows, Errc::ShapeMismatch, "solve_spd: rhs rows mismatch");
    DenseMatrix l = cholesky(a);
    DenseMatrix x(b.rows, b.cols);
    for (std::size_t c = 0; c < b.cols; ++c) {
        auto col = b.column(c);
        auto sol = cholesky_solve(l, col);
        for (std::size_t r = 0; r < b.rows; ++r) x(r, c) = sol[r];
    }
    return x;
}

namespace {

struct LuFactors {
    DenseMatrix lu;
    std::vector<std::size_t> piv;
};

LuFactors lu_factor(DenseMatrix a) {
    const std::size_t n = a.rows;
    require(a.rows == a.cols, Errc::ShapeMismatch, "solve_lu: matrix not square");
    require(a.finite(), Errc::NonFinite, "solve_lu: input contains NaN/Inf");

    double scale = 0.0;
    for (double x : a.a) scale = std::max(scale, std::abs(x));
    double tol = std::max(scale, 1.0) * 1e-14 * static_cast<double>(n);

    std::vector<std::size_t> piv(n);
    std::iota(piv.begin(), piv.end(), 0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pr = k;
        double best = std::abs(a(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            double mag = std::abs(a(i, k));
            if (mag > best) {
                best = mag;
                pr = i;
            }
        }
        if (best <= tol) fail(Errc::SingularSystem, "solve_lu: singular system");
        if (pr != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(pr, j));
            std::swap(piv[k], piv[pr]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            a(i, k) /= a(k, k);
            double lik = a(i, k);
            if (lik == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= lik * a(k, j);
        }
    }
    return {std::move(a), std::move(piv)};
}

std::vector<double> lu_solve_one(const LuFactors& f, std::span<const double> b) {
    const std::size_t n = f.lu.rows;
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[f.piv[i]];
        for (std::size_t k = 0; k < i; ++k) s -= f.lu(i, k) * x[k];
        x[i] = s;
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= f.lu(ii, k) * x[k];
        x[ii] = s / f.lu(ii, ii);
    }
    return x;
}

} // namespace

std::vector<double> solve_lu(const DenseMatrix& a, std::span<const double> b) {
    require(b.size() == a.rows, Errc::ShapeMismatch, "solve_lu: rhs length mismatch");
    return lu_solve_one(lu_factor(a), b);
}

DenseMatrix solve_lu(const DenseMatrix& a, const DenseMatrix& b) {
    require(b.rows == a.rows, Errc::ShapeMismatch, "solve_lu: rhs rows mismatch");
    LuFactors f = lu_factor(a);
    DenseMatrix x(b.rows, b.cols);
    for (std::size_t c = 0; c < b.cols; ++c) {
        auto col = b.column(c);
        auto sol = lu_solve_one(f, col);
        for (std::size_t r = 0; r < b.rows; ++r) x(r, c) = sol[r];
    }
    return x;
}

} // namespace rpom::linalg
