// Expert-interaction diagnostics: cosine-similarity heat maps, bargaining
// utilities, and a sampling-based Pareto domination check on the norm ball.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "namex/dense.hpp"
#include "namex/tensor_store.hpp"

namespace namex {

enum class SimilaritySource { parameters, synthetic_activations };

struct SimilarityMatrix {
    int64_t n = 0;
    std::vector<double> values;  // row-major n x n
    SimilaritySource source = SimilaritySource::parameters;
    int probes = 0;
    uint64_t seed = 0;

    double at(int64_t i, int64_t j) const { return values[i * n + j]; }
};

// parameters: cosine of flattened expert parameter vectors.
// synthetic_activations: experts must be two-tensor MLPs [in,hidden],
// [hidden,out]; entry (i,j) is the mean output cosine over seeded
// standard-normal probes through max(0, x W1) W2.
SimilarityMatrix cosine_similarity(const Layer& layer, SimilaritySource source,
                                   uint64_t probe_seed, int probes = 256);

void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& csv_path,
                          const std::filesystem::path& meta_path);

// u_i = tau_i . g
std::vector<double> utilities(const DomainMatrix& g_mat, std::span<const double> g);

struct DominationVerdict {
    bool dominated = false;
    std::vector<double> witness;  // dominating direction when found
    int64_t samples_tested = 0;
};

struct ParetoConfig {
    double weak_margin = 1e-9;    // allowed slack on "no utility gets worse"
    double strict_margin = 1e-6;  // required gain on at least one utility
};

// Searches the radius-eps sphere for a direction that weakly improves every
// utility and strictly improves one. The radial rescale of g is always tested
// first, then `samples` seeded uniform sphere points. Requires |g| <= eps.
DominationVerdict pareto_check(const DomainMatrix& g_mat, std::span<const double> g,
                               double ball_radius, int64_t samples, uint64_t seed,
                               const ParetoConfig& cfg = {});

}  // namespace namex
