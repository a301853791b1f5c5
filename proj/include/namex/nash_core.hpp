// Bargaining core: domain vectors, Gram matrices, and the solver for the
// weight system K * alpha = 1/alpha with alpha > 0. The aggregated direction
// g = sum_i alpha_i tau_i satisfies g . tau_i = 1/alpha_i at convergence.
#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "namex/dense.hpp"
#include "namex/tensor_store.hpp"

namespace namex {

enum class FlattenMode { per_layer, per_tensor };

enum class SolveStatus { converged, budget_exhausted, degenerate };

struct NashConfig {
    double tolerance = 1e-10;
    int max_iterations = 20;
    std::optional<double> ball_radius;  // rescale the direction to this norm when set
};

struct NashWeights {
    std::vector<double> alpha;
    double residual = 0.0;  // max_j |alpha_j * (K alpha)_j - 1|
    int iterations = 0;     // Newton steps consumed
    SolveStatus status = SolveStatus::degenerate;
};

// Column i = flatten(E_i - base), all tensors concatenated in manifest order.
DomainMatrix domain_vectors(const Layer& layer);
// One matrix per tensor, same column convention.
std::vector<DomainMatrix> domain_vectors_per_tensor(const Layer& layer);

GramMatrix gram(const DomainMatrix& g);

// Damped Newton on F(alpha) = alpha*(K alpha) - 1 with Jacobian
// diag(K alpha) + diag(alpha) K, started from alpha_j = 1/sqrt(K_jj) (exact
// for diagonal K), backtracking to keep every component positive.
NashWeights solve_nash(const GramMatrix& k, const NashConfig& cfg);

// g = G * alpha, optionally rescaled to cfg.ball_radius. Requires converged
// weights.
std::vector<double> direction(const DomainMatrix& g, const NashWeights& w, const NashConfig& cfg);

// (alpha_j * |tau_j|^2, sum_{i != j} alpha_i tau_i.tau_j); the parts add up
// to 1/alpha_j. Positive cross term = the other experts help expert j,
// negative = they work against it.
std::pair<double, double> interaction_split(const GramMatrix& k, const NashWeights& w, int64_t j);

}  // namespace namex
