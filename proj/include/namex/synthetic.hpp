#pragma once

#include <cstdint>

#include "namex/tensor_store.hpp"

namespace namex {

struct SyntheticSpec {
    int layers = 1;
    int experts = 2;
    int64_t dim = 8;
    double scale = 1.0;
    uint64_t seed = 0;
    // Replicate one expert set across all layers. With a first-layer-only
    // schedule the propagation then sees constant forcing, which is the
    // setting where the block-matrix recurrence describes the whole run.
    bool frozen = false;
};

// One tensor "w" of shape [dim] per expert, standard-normal entries times
// scale, fully determined by the seed.
ExpertStack make_synthetic_stack(const SyntheticSpec& spec);

// Two-tensor MLP experts ([in,hidden], [hidden,out]) for activation-mode
// similarity analysis.
ExpertStack make_synthetic_mlp_stack(int layers, int experts, int64_t in_dim, int64_t hidden_dim,
                                     int64_t out_dim, double scale, uint64_t seed);

}  // namespace namex
