#include "rpom/pod.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rpom/io.hpp"

namespace rpom::pod {

namespace {

// Stage 1 + stacked stage-2 SVD shared by nested_pod and the eigenvalue
// export. Works in the unweighted Euclidean metric: for a uniform cell
// weight the stage-1 scaling by singular values cancels the weight exactly,
// so only the final modes and spectrum need rescaling.
linalg::SvdResult stacked_svd(const store::SnapshotSet& set, std::size_t n_int) {
    auto train = set.indices_of(store::Split::train);
    require(!train.empty(), Errc::EmptySplit, "nested_pod: empty train split");
    require(n_int >= 1, Errc::ConfigError, "nested_pod: n_int must be >= 1");
    require(n_int <= set.min_steps(store::Split::train), Errc::ConfigError,
            "nested_pod: n_int exceeds the shortest training run");

    const std::size_t dofs = set.grid.cells();
    linalg::DenseMatrix stacked(dofs, n_int * train.size());

    std::size_t col0 = 0;
    for (std::size_t i : train) {
        const auto& run = set.runs[i];
        linalg::DenseMatrix snap(dofs, run.steps());
        for (std::size_t k = 0; k < run.steps(); ++k)
            for (std::size_t d = 0; d < dofs; ++d) snap(d, k) = run.temperature[k].v[d];

        linalg::SvdResult svd = linalg::thin_svd(snap);
        for (std::size_t k = 0; k < n_int; ++k)
            for (std::size_t d = 0; d < dofs; ++d)
                stacked(d, col0 + k) = svd.u(d, k) * svd.sigma[k];
        col0 += n_int;
    }
    return linalg::thin_svd(stacked);
}

} // namespace

ReducedBasis nested_pod(const store::SnapshotSet& set, std::size_t n_int, std::size_t n) {
    auto train = set.indices_of(store::Split::train);
    require(n >= 1 && n <= n_int * train.size(), Errc::ConfigError,
            "nested_pod: need 1 <= n <= n_int * M");

    linalg::SvdResult svd = stacked_svd(set, n_int);
    const double weight = set.grid.cell_area();
    const double root_w = std::sqrt(weight);

    double smax = svd.sigma.empty() ? 0.0 : svd.sigma.front();
    std::size_t rank = 0;
    while (rank < svd.sigma.size() && svd.sigma[rank] > smax * 1e-12) ++rank;

    ReducedBasis basis;
    basis.n_int = n_int;
    basis.weight = weight;
    basis.rank_deficient = rank < n;
    std::size_t kept = std::min(n, std::max<std::size_t>(rank, 1));

    basis.modes = linalg::DenseMatrix(svd.u.rows, kept);
    for (std::size_t c = 0; c < kept; ++c)
        for (std::size_t r = 0; r < svd.u.rows; ++r)
            basis.modes(r, c) = svd.u(r, c) / root_w;
    basis.singular_values.resize(svd.sigma.size());
    for (std::size_t k = 0; k < svd.sigma.size(); ++k)
        basis.singular_values[k] = svd.sigma[k] * root_w;
    return basis;
}

std::vector<double> project_l2(const ReducedBasis& basis, std::span<const double> field) {
    require(field.size() == basis.dofs(), Errc::ShapeMismatch, "project_l2: field size mismatch");
    std::vector<double> theta(basis.n_modes(), 0.0);
    for (std::size_t c = 0; c < basis.n_modes(); ++c) {
        double s = 0.0;
        for (std::size_t d = 0; d < basis.dofs(); ++d) s += field[d] * basis.modes(d, c);
        theta[c] = s * basis.weight;
    }
    return theta;
}

std::vector<double> reconstruct_linear(const ReducedBasis& basis, std::span<const double> theta) {
    require(theta.size() == basis.n_modes(), Errc::ShapeMismatch,
            "reconstruct_linear: coefficient count mismatch");
    std::vector<double> field(basis.dofs(), 0.0);
    for (std::size_t c = 0; c < basis.n_modes(); ++c) {
        double t = theta[c];
        if (t == 0.0) continue;
        for (std::size_t d = 0; d < basis.dofs(); ++d) field[d] += t * basis.modes(d, c);
    }
    return field;
}

std::vector<double> normalized_eigenvalues(const store::SnapshotSet& set, std::size_t n_int) {
    linalg::SvdResult svd = stacked_svd(set, n_int);
    std::vector<double> out(svd.sigma.size(), 0.0);
    if (svd.sigma.empty() || svd.sigma.front() == 0.0) return out;
    double top = svd.sigma.front() * svd.sigma.front();
    for (std::size_t k = 0; k < svd.sigma.size(); ++k)
        out[k] = svd.sigma[k] * svd.sigma[k] / top;
    return out;
}

std::string eigenvalue_csv(std::span<const double> normalized) {
    std::ostringstream out;
    out << "index,normalized_eigenvalue\n";
    for (std::size_t k = 0; k < normalized.size(); ++k)
        out << k << "," << store::format_double(normalized[k]) << "\n";
    return out.str();
}

void ReducedBasis::save(const std::filesystem::path& path) const {
    io::Writer w(io::Kind::basis);
    w.u64(modes.rows);
    w.u64(modes.cols);
    w.f64_array(modes.a);
    w.u64(singular_values.size());
    w.f64_array(singular_values);
    w.u64(n_int);
    w.f64(weight);
    w.u32(rank_deficient ? 1u : 0u);
    w.str(provenance);
    w.commit(path);
}

ReducedBasis ReducedBasis::load(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::basis);
    ReducedBasis b;
    std::size_t rows = r.u64();
    std::size_t cols = r.u64();
    b.modes = linalg::DenseMatrix(rows, cols);
    b.modes.a = r.f64_array(rows * cols);
    std::size_t nsv = r.u64();
    b.singular_values = r.f64_array(nsv);
    b.n_int = r.u64();
    b.weight = r.f64();
    b.rank_deficient = r.u32() != 0;
    b.provenance = r.str();
    return b;
}

} // namespace rpom::pod
