#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rpom/linalg.hpp"

namespace rpom::diagnostics {

struct PcaResult {
    linalg::DenseMatrix scores;            // n x k
    std::vector<double> explained_ratio;   // per retained component
    std::vector<double> explained_variance;
    double total_variance = 0.0;
};

/// Column-centered thin-SVD principal component scores. Rank-deficient data
/// simply yields zero trailing score columns.
PcaResult pca_embed(const linalg::DenseMatrix& x, std::size_t k = 2);

struct TsneParams {
    double perplexity = 30.0;
    int iterations = 1000;
    std::uint64_t seed = 0;
    double learning_rate = 200.0;
    double exaggeration = 12.0;
    int exaggeration_iters = 250;
    double momentum_early = 0.5;
    double momentum_late = 0.8;
    int momentum_switch = 250;
    bool adaptive_gains = true;   // false = plain descent mode
    int checkpoint_every = 10;
    bool clamp_perplexity = true; // clamp to (n-1)/3 instead of failing
};

struct TsneResult {
    linalg::DenseMatrix embedding;   // n x 2
    std::vector<double> kl_history;  // checkpoints, true (unexaggerated) KL
    double kl_post_exaggeration = 0.0;
    double kl_final = 0.0;
    bool converged = true;           // final KL did not exceed the post-exaggeration KL
    double perplexity_used = 0.0;
};

/// Exact O(n^2) t-SNE: Gaussian conditionals with per-point bandwidth found
/// by entropy bisection, symmetrized joints, early exaggeration, momentum
/// gradient descent with optional adaptive gains.
TsneResult tsne_embed(const linalg::DenseMatrix& x, const TsneParams& params);

/// Row-stochastic p_{j|i} from squared distances; entropy matched to
/// log2(perplexity) within 1e-4 bits per point.
struct Conditionals {
    linalg::DenseMatrix p;              // n x n, zero diagonal
    std::vector<double> entropy_bits;   // achieved H(P_i)
};
Conditionals conditional_gaussian(const linalg::DenseMatrix& dist_sq, double perplexity);

/// Pairwise squared Euclidean distances between rows.
linalg::DenseMatrix pairwise_sq_distances(const linalg::DenseMatrix& x);

/// CSV columns: trajectory_id, timestamp, x, y, method, params_hash.
std::string embedding_csv(const linalg::DenseMatrix& points, std::span<const int> labels,
                          std::span<const double> timestamps, const std::string& method,
                          const std::string& params_hash);

std::string tsne_params_hash(const TsneParams& params);

} // namespace rpom::diagnostics
