// Merging strategies over an expert stack.
//
// Propagation strategies thread one base expert through the layers:
//   average      E' = E + (gamma/N) sum_i M_i tau_i
//   ep_camex     E' = E + gamma sum_i M_i tau_i
//   namex        E' = E + gamma sum_i alpha_i tau_i   (alpha from the solver)
//   *_momentum   the direction feeds a complex or quaternion buffer and the
//                base moves by the buffer's real/scalar lane times gamma
// camex_static does no propagation; every layer is merged in place.
//
// Every layer additionally gets a routed merge
//   E_hat = base + eta sum_i M_i (s_i * tau_i)
// with tau recomputed against the propagated base of that layer.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "namex/errors.hpp"
#include "namex/momentum_algebra.hpp"
#include "namex/nash_core.hpp"
#include "namex/tensor_store.hpp"

namespace namex {

enum class MergeStrategy {
    average,
    camex_static,
    ep_camex,
    namex,
    namex_momentum,
    namex_quaternion,
    ep_camex_momentum,
};

const char* strategy_name(MergeStrategy s);

// When to re-solve the bargaining system along the layer axis: once at layer
// zero, or at every layer index divisible by `every`.
struct RecomputeSchedule {
    bool first_only = true;
    int every = 1;

    static RecomputeSchedule first() { return {true, 1}; }
    static RecomputeSchedule every_n(int n) { return {false, n}; }
    bool solve_at(int layer) const { return first_only ? layer == 0 : layer % every == 0; }
};

struct MergeConfig {
    MergeStrategy strategy = MergeStrategy::namex;
    double gamma = 1.0;  // propagation step size
    double eta = 1.0;    // routed-merge step size
    ComplexCoeff beta{};
    QuaternionCoeff beta_quat{};
    RecomputeSchedule recompute = RecomputeSchedule::first();
    NashConfig nash{};
    FlattenMode flatten = FlattenMode::per_layer;
    bool record_momentum = false;  // keep per-layer buffer snapshots in the output
};

// Working tensor in solver precision; storage stays f32, arithmetic does not.
struct DTensor {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> data;
};

struct LayerTraceRecord {
    int layer = 0;
    bool solved = false;            // a bargaining solve ran at this layer
    std::vector<double> alpha;      // weights applied to the domain vectors
    double g_norm = 0.0;            // |direction| before the step size
    double step_norm = 0.0;         // |E^(l+1) - E^(l)|
    std::vector<int> cross_sign;    // per expert, sign of the interaction cross term
    int solver_iterations = 0;      // Newton steps consumed here (0 on reuse layers)
};

struct PropagationTrace {
    std::vector<LayerTraceRecord> records;

    int total_solves() const;
};

struct MergedOutput {
    // per layer: the propagated base E^(l) and the routed expert E_hat^(l)
    std::vector<std::vector<DTensor>> propagated;
    std::vector<std::vector<DTensor>> routed;
    PropagationTrace trace;
    // per layer, post-step momentum buffer in flattened layer order, when
    // cfg.record_momentum is set (complex runs: re/im; quaternion runs: the
    // first two lanes, w/x)
    std::vector<std::vector<double>> momentum_re;
    std::vector<std::vector<double>> momentum_im;
};

MergedOutput merge(const ExpertStack& stack, const MergeConfig& cfg);

// Strategy-checked entry points.
MergedOutput merge_average(const ExpertStack& stack, const MergeConfig& cfg);
MergedOutput merge_camex_static(const ExpertStack& stack, const MergeConfig& cfg);
MergedOutput merge_namex(const ExpertStack& stack, const MergeConfig& cfg);
MergedOutput merge_namex_momentum(const ExpertStack& stack, const MergeConfig& cfg);

// E_hat = base + eta sum_i M_i (s_i * tau_i) with tau taken against `base`.
std::vector<DTensor> routed_merge(const Layer& layer, const std::vector<DTensor>& base,
                                  const MergeConfig& cfg);

// Checkpoint view of a merge result: per layer the propagated base plus a
// single "merged" expert holding the routed tensors.
ExpertStack to_checkpoint(const MergedOutput& out);

void write_trace_csv(const PropagationTrace& trace, MergeStrategy strategy,
                     const std::filesystem::path& path);

}  // namespace namex
