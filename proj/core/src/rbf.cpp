#include "rpom/rbf.hpp"

#include <cmath>

#include "rpom/io.hpp"

namespace rpom::rbf {

double kernel_value(Kernel k, double r) {
    return k == Kernel::linear ? r : r * r * r;
}

namespace {

double distance(const linalg::DenseMatrix& pts, std::size_t i, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t c = 0; c < pts.cols; ++c) {
        double d = pts(i, c) - x[c];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

RbfModel fit_rbf(const linalg::DenseMatrix& centers, const linalg::DenseMatrix& values,
                 Kernel kernel, double lambda) {
    require(centers.rows >= 1, Errc::EmptyData, "fit_rbf: no centers");
    require(values.rows == centers.rows, Errc::ShapeMismatch,
            "fit_rbf: center/value count mismatch");
    require(lambda >= 0.0, Errc::ConfigError, "fit_rbf: lambda must be nonnegative");
    require(centers.finite() && values.finite(), Errc::NonFinite, "fit_rbf: non-finite input");

    const std::size_t k = centers.rows;
    linalg::DenseMatrix phi(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        phi(i, i) = kernel_value(kernel, 0.0) + lambda;
        for (std::size_t j = i + 1; j < k; ++j) {
            double r = distance(centers, i, std::span(&centers.a[j * centers.cols], centers.cols));
            double v = kernel_value(kernel, r);
            phi(i, j) = v;
            phi(j, i) = v;
        }
    }

    RbfModel model;
    model.kernel = kernel;
    model.centers = centers;
    model.lambda = lambda;
    try {
        model.weights = linalg::solve_spd(phi, values);
    } catch (const Error& e) {
        if (e.code() != Errc::NotSpd) throw;
        model.weights = linalg::solve_lu(phi, values);  // indefinite kernel matrix
    }
    return model;
}

std::vector<double> eval_rbf(const RbfModel& model, std::span<const double> x) {
    require(x.size() == model.in_dim(), Errc::ShapeMismatch, "eval_rbf: input dim mismatch");
    std::vector<double> out(model.out_dim(), 0.0);
    for (std::size_t i = 0; i < model.center_count(); ++i) {
        double v = kernel_value(model.kernel, distance(model.centers, i, x));
        if (v == 0.0) continue;
        for (std::size_t q = 0; q < model.out_dim(); ++q) out[q] += model.weights(i, q) * v;
    }
    for (double v : out) require(std::isfinite(v), Errc::NonFinite, "eval_rbf: non-finite output");
    return out;
}

double center_residual(const RbfModel& model, const linalg::DenseMatrix& centers,
                       const linalg::DenseMatrix& values) {
    double worst = 0.0;
    for (std::size_t i = 0; i < centers.rows; ++i) {
        auto z = eval_rbf(model, std::span(&centers.a[i * centers.cols], centers.cols));
        for (std::size_t q = 0; q < values.cols; ++q)
            worst = std::max(worst, std::abs(z[q] - values(i, q)));
    }
    return worst;
}

void RbfModel::save(const std::filesystem::path& path) const {
    io::Writer w(io::Kind::rbf);
    w.u32(kernel == Kernel::linear ? 0u : 1u);
    w.f64(lambda);
    w.u64(centers.rows);
    w.u64(centers.cols);
    w.f64_array(centers.a);
    w.u64(weights.cols);
    w.f64_array(weights.a);
    w.commit(path);
}

RbfModel RbfModel::load(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::rbf);
    RbfModel m;
    m.kernel = r.u32() == 0 ? Kernel::linear : Kernel::cubic;
    m.lambda = r.f64();
    std::size_t rows = r.u64();
    std::size_t cols = r.u64();
    m.centers = linalg::DenseMatrix(rows, cols);
    m.centers.a = r.f64_array(rows * cols);
    std::size_t q = r.u64();
    m.weights = linalg::DenseMatrix(rows, q);
    m.weights.a = r.f64_array(rows * q);
    return m;
}

} // namespace rpom::rbf
