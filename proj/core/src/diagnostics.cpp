#include "rpom/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rpom/io.hpp"
#include "rpom/rng.hpp"
#include "rpom/store.hpp"

namespace rpom::diagnostics {

PcaResult pca_embed(const linalg::DenseMatrix& x, std::size_t k) {
    require(x.rows >= 2, Errc::EmptyData, "pca_embed: need at least 2 rows");
    require(x.finite(), Errc::NonFinite, "pca_embed: non-finite input");

    linalg::DenseMatrix centered = x;
    for (std::size_t c = 0; c < x.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) mean += x(r, c);
        mean /= static_cast<double>(x.rows);
        for (std::size_t r = 0; r < x.rows; ++r) centered(r, c) -= mean;
    }

    linalg::SvdResult svd = linalg::thin_svd(centered);
    const double denom = static_cast<double>(x.rows - 1);

    PcaResult out;
    out.total_variance = 0.0;
    double sum_sq = 0.0;
    for (double s : svd.sigma) sum_sq += s * s;
    out.total_variance = sum_sq / denom;

    std::size_t kk = std::min(k, svd.sigma.size());
    out.scores = linalg::DenseMatrix(x.rows, k);
    for (std::size_t c = 0; c < kk; ++c)
        for (std::size_t r = 0; r < x.rows; ++r)
            out.scores(r, c) = svd.u(r, c) * svd.sigma[c];
    for (std::size_t c = 0; c < k; ++c) {
        double var = c < kk ? svd.sigma[c] * svd.sigma[c] / denom : 0.0;
        out.explained_variance.push_back(var);
        out.explained_ratio.push_back(sum_sq > 0.0 ? var * denom / sum_sq : 0.0);
    }
    return out;
}

linalg::DenseMatrix pairwise_sq_distances(const linalg::DenseMatrix& x) {
    linalg::DenseMatrix d(x.rows, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = i + 1; j < x.rows; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols; ++c) {
                double diff = x(i, c) - x(j, c);
                s += diff * diff;
            }
            d(i, j) = s;
            d(j, i) = s;
        }
    }
    return d;
}

Conditionals conditional_gaussian(const linalg::DenseMatrix& dist_sq, double perplexity) {
    const std::size_t n = dist_sq.rows;
    require(n >= 2, Errc::EmptyData, "conditional_gaussian: need at least 2 points");
    require(perplexity > 1.0, Errc::PerplexityInfeasible,
            "conditional_gaussian: perplexity must exceed 1");

    const double target = std::log2(perplexity);
    Conditionals out;
    out.p = linalg::DenseMatrix(n, n);
    out.entropy_bits.assign(n, 0.0);

    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
        double best_beta = 1.0, best_err = std::numeric_limits<double>::infinity();

        // entropy in bits of p_{j|i} at precision beta; negative sum marks
        // underflow of every tail weight
        auto entropy_at = [&](double b) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row[j] = (j == i) ? 0.0 : std::exp(-b * dist_sq(i, j));
                sum += row[j];
            }
            if (sum <= 0.0) return -1.0;
            double entropy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (row[j] <= 0.0) continue;
                double pj = row[j] / sum;
                entropy -= pj * std::log2(pj);
            }
            return entropy;
        };

        for (int it = 0; it < 200; ++it) {
            double entropy = entropy_at(beta);
            if (entropy < 0.0) {  // underflow: every neighbour vanished
                beta_hi = beta;
                beta = 0.5 * (beta_lo + beta);
                continue;
            }
            double err = entropy - target;
            if (std::abs(err) < best_err) {
                best_err = std::abs(err);
                best_beta = beta;
            }
            if (std::abs(err) <= 1e-4) break;
            if (err > 0.0) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta_lo + beta_hi);
            } else {
                beta_hi = beta;
                beta = 0.5 * (beta_lo + beta_hi);
            }
        }

        out.entropy_bits[i] = entropy_at(best_beta);
        double sum = 0.0;
        for (double v : row) sum += v;
        for (std::size_t j = 0; j < n; ++j) out.p(i, j) = (sum > 0.0) ? row[j] / sum : 0.0;
    }
    return out;
}

namespace {

double kl_divergence(const linalg::DenseMatrix& p, const linalg::DenseMatrix& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.rows; ++i)
        for (std::size_t j = 0; j < p.cols; ++j) {
            if (i == j || p(i, j) <= 0.0) continue;
            kl += p(i, j) * std::log(p(i, j) / q(i, j));
        }
    return kl;
}

} // namespace

TsneResult tsne_embed(const linalg::DenseMatrix& x, const TsneParams& params) {
    const std::size_t n = x.rows;
    require(n >= 3, Errc::EmptyData, "tsne_embed: need at least 3 rows");
    require(x.finite(), Errc::NonFinite, "tsne_embed: non-finite input");

    double perplexity = params.perplexity;
    double max_feasible = static_cast<double>(n - 1) / 3.0;
    if (perplexity > max_feasible) {
        require(params.clamp_perplexity, Errc::PerplexityInfeasible,
                "tsne_embed: need rows >= 3 * perplexity");
        perplexity = std::max(1.0 + 1e-9, max_feasible);
    }
    require(perplexity > 1.0, Errc::PerplexityInfeasible,
            "tsne_embed: perplexity must exceed 1");

    linalg::DenseMatrix dist = pairwise_sq_distances(x);
    Conditionals cond = conditional_gaussian(dist, perplexity);

    // Symmetrized joint probabilities with a small floor.
    linalg::DenseMatrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            p(i, j) = std::max((cond.p(i, j) + cond.p(j, i)) / (2.0 * n), 1e-12);
        }

    Rng rng(params.seed);
    linalg::DenseMatrix y(n, 2);
    for (double& v : y.a) v = rng.normal() * 1e-4;

    linalg::DenseMatrix vel(n, 2), gains(n, 2), grad(n, 2), q(n, n);
    std::fill(gains.a.begin(), gains.a.end(), 1.0);

    TsneResult result;
    result.perplexity_used = perplexity;

    auto compute_q = [&]() {
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double dy0 = y(i, 0) - y(j, 0);
                double dy1 = y(i, 1) - y(j, 1);
                double num = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q(i, j) = num;
                q(j, i) = num;
                z += 2.0 * num;
            }
        return z;
    };

    const int ex_end = std::min(params.exaggeration_iters, params.iterations);
    for (int it = 0; it < params.iterations; ++it) {
        bool exaggerating = it < ex_end;
        double z = compute_q();

        std::fill(grad.a.begin(), grad.a.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double pij = exaggerating ? p(i, j) * params.exaggeration : p(i, j);
                double qij = std::max(q(i, j) / z, 1e-12);
                double mult = 4.0 * (pij - qij) * q(i, j);
                grad(i, 0) += mult * (y(i, 0) - y(j, 0));
                grad(i, 1) += mult * (y(i, 1) - y(j, 1));
            }

        double momentum = it < params.momentum_switch ? params.momentum_early
                                                      : params.momentum_late;
        for (std::size_t k = 0; k < y.a.size(); ++k) {
            if (params.adaptive_gains) {
                bool same_sign = (grad.a[k] > 0.0) == (vel.a[k] > 0.0);
                gains.a[k] = same_sign ? std::max(gains.a[k] * 0.8, 0.01) : gains.a[k] + 0.2;
            }
            vel.a[k] = momentum * vel.a[k] - params.learning_rate * gains.a[k] * grad.a[k];
            y.a[k] += vel.a[k];
        }
        // keep the embedding centered
        for (int c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
        }

        bool checkpoint = ((it + 1) % params.checkpoint_every == 0) ||
                          it + 1 == params.iterations || it + 1 == ex_end;
        if (checkpoint && it + 1 >= ex_end) {
            double z2 = compute_q();
            linalg::DenseMatrix qn(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (i != j) qn(i, j) = std::max(q(i, j) / z2, 1e-12);
            double kl = kl_divergence(p, qn);
            if (result.kl_history.empty()) result.kl_post_exaggeration = kl;
            result.kl_history.push_back(kl);
        }
    }

    result.embedding = std::move(y);
    result.kl_final = result.kl_history.empty() ? 0.0 : result.kl_history.back();
    result.converged = result.kl_final <= result.kl_post_exaggeration + 1e-12;
    return result;
}

std::string tsne_params_hash(const TsneParams& params) {
    std::ostringstream s;
    s << params.perplexity << "|" << params.iterations << "|" << params.seed << "|"
      << params.learning_rate << "|" << params.exaggeration << "|" << params.exaggeration_iters
      << "|" << params.momentum_early << "|" << params.momentum_late << "|"
      << params.adaptive_gains;
    std::string text = s.str();
    std::uint32_t crc = io::crc32(
        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc);
    return buf;
}

std::string embedding_csv(const linalg::DenseMatrix& points, std::span<const int> labels,
                          std::span<const double> timestamps, const std::string& method,
                          const std::string& params_hash) {
    require(points.cols == 2, Errc::ShapeMismatch, "embedding_csv: expected 2-D points");
    require(labels.size() == points.rows && timestamps.size() == points.rows,
            Errc::ShapeMismatch, "embedding_csv: label/timestamp count mismatch");
    std::ostringstream out;
    out << "trajectory_id,timestamp,x,y,method,params_hash\n";
    for (std::size_t r = 0; r < points.rows; ++r) {
        out << labels[r] << "," << store::format_double(timestamps[r]) << ","
            << store::format_double(points(r, 0)) << "," << store::format_double(points(r, 1))
            << "," << method << "," << params_hash << "\n";
    }
    return out.str();
}

} // namespace rpom::diagnostics
