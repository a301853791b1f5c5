#include "namex/merge_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "namex/kernels.hpp"

namespace namex {

const char* strategy_name(MergeStrategy s) {
    switch (s) {
        case MergeStrategy::average: return "average";
        case MergeStrategy::camex_static: return "camex";
        case MergeStrategy::ep_camex: return "ep-camex";
        case MergeStrategy::namex: return "namex";
        case MergeStrategy::namex_momentum: return "namex-mom";
        case MergeStrategy::namex_quaternion: return "namex-quat";
        case MergeStrategy::ep_camex_momentum: return "ep-camex-mom";
    }
    return "?";
}

int PropagationTrace::total_solves() const {
    int n = 0;
    for (const auto& r : records) n += r.solved ? 1 : 0;
    return n;
}

namespace {

bool is_momentum(MergeStrategy s) {
    return s == MergeStrategy::namex_momentum || s == MergeStrategy::namex_quaternion ||
           s == MergeStrategy::ep_camex_momentum;
}

bool propagates(MergeStrategy s) { return s != MergeStrategy::camex_static; }

void check_config(const MergeConfig& cfg) {
    if (!(cfg.gamma >= 0.0)) throw std::invalid_argument("merge: gamma must be nonnegative");
    if (!(cfg.eta >= 0.0)) throw std::invalid_argument("merge: eta must be nonnegative");
    if (!cfg.recompute.first_only && cfg.recompute.every < 1)
        throw std::invalid_argument("merge: recompute interval must be >= 1");
}

// Tensor boundaries inside the flattened layer vector, manifest order.
struct FlatLayout {
    std::vector<int64_t> offsets;  // size T+1
    int64_t total = 0;
};

FlatLayout layout_of(const Layer& layer) {
    FlatLayout fl;
    fl.offsets.push_back(0);
    for (const auto& t : layer.base) {
        fl.total += t.numel();
        fl.offsets.push_back(fl.total);
    }
    return fl;
}

void require_uniform_structure(const ExpertStack& stack) {
    const Layer& ref = stack.layers.front();
    for (size_t l = 1; l < stack.layers.size(); ++l) {
        const Layer& layer = stack.layers[l];
        bool same = layer.base.size() == ref.base.size();
        for (size_t t = 0; same && t < ref.base.size(); ++t)
            same = layer.base[t].name == ref.base[t].name && layer.base[t].shape == ref.base[t].shape;
        if (!same)
            throw std::invalid_argument(
                "merge: propagation needs identical tensor structure across layers; layer " +
                std::to_string(layer.index) + " differs from layer " + std::to_string(ref.index));
    }
}

std::vector<double> flatten_base(const Layer& layer, int64_t total) {
    std::vector<double> flat(static_cast<size_t>(total), 0.0);
    int64_t off = 0;
    for (const auto& t : layer.base) {
        for (int64_t k = 0; k < t.numel(); ++k) flat[size_t(off + k)] = double(t.data[size_t(k)]);
        off += t.numel();
    }
    return flat;
}

std::vector<DTensor> unflatten(const Layer& shape_ref, const std::vector<double>& flat) {
    std::vector<DTensor> out;
    int64_t off = 0;
    for (const auto& t : shape_ref.base) {
        DTensor dt;
        dt.name = t.name;
        dt.shape = t.shape;
        dt.data.assign(flat.begin() + off, flat.begin() + off + t.numel());
        out.push_back(std::move(dt));
        off += t.numel();
    }
    return out;
}

// tau_i = E_i - base, column-major over the flattened layer.
std::vector<double> build_columns(const Layer& layer, const std::vector<double>& base_flat,
                                  const FlatLayout& fl) {
    const int64_t n = layer.num_experts();
    std::vector<double> cols(static_cast<size_t>(n * fl.total), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double* col = cols.data() + i * fl.total;
        for (size_t t = 0; t < layer.base.size(); ++t) {
            const int64_t lo = fl.offsets[t];
            const int64_t len = fl.offsets[t + 1] - lo;
            kernels::sub_f32_f64(layer.experts[size_t(i)].tensors[t].data,
                                 std::span<const double>(base_flat.data() + lo, size_t(len)),
                                 std::span<double>(col + lo, size_t(len)));
        }
    }
    return cols;
}

const std::vector<float>* curvature_diag(const Layer& layer, const std::string& expert,
                                         const std::string& tensor) {
    auto ei = layer.curvature.find(expert);
    if (ei == layer.curvature.end()) return nullptr;
    auto ti = ei->second.find(tensor);
    if (ti == ei->second.end()) return nullptr;
    return &ti->second;
}

// out += w * (M_i o col_i) over the flattened layer, identity curvature where
// none is stored.
void accumulate_curved(const Layer& layer, const FlatLayout& fl, const std::vector<double>& cols,
                       int64_t expert, double w, std::vector<double>& out) {
    const double* col = cols.data() + expert * fl.total;
    for (size_t t = 0; t < layer.base.size(); ++t) {
        const int64_t lo = fl.offsets[t];
        const int64_t len = fl.offsets[t + 1] - lo;
        const auto* diag = curvature_diag(layer, layer.experts[size_t(expert)].name, layer.base[t].name);
        if (diag) {
            for (int64_t k = 0; k < len; ++k)
                out[size_t(lo + k)] += w * double((*diag)[size_t(k)]) * col[lo + k];
        } else {
            kernels::axpy(w, std::span<const double>(col + lo, size_t(len)),
                          std::span<double>(out.data() + lo, size_t(len)));
        }
    }
}

std::vector<double> routing_weights(const Layer& layer) {
    if (!layer.routing.empty()) {
        for (double s : layer.routing)
            if (s < 0.0) throw std::invalid_argument("routed merge: negative routing weight");
        return layer.routing;
    }
    return std::vector<double>(size_t(layer.num_experts()), 1.0 / double(layer.num_experts()));
}

// Bargaining groups: the whole layer, or one group per tensor.
struct SolveGroup {
    int64_t lo, hi;  // row range in the flattened layer
};

std::vector<SolveGroup> groups_of(const FlatLayout& fl, FlattenMode mode) {
    std::vector<SolveGroup> gs;
    if (mode == FlattenMode::per_layer) {
        gs.push_back({0, fl.total});
    } else {
        for (size_t t = 0; t + 1 < fl.offsets.size(); ++t) gs.push_back({fl.offsets[t], fl.offsets[t + 1]});
    }
    return gs;
}

GramMatrix gram_of_slice(const std::vector<double>& cols, int64_t d_total, int64_t n,
                         const SolveGroup& g) {
    GramMatrix k;
    k.n = n;
    k.k.resize(size_t(n * n));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = i; j < n; ++j) {
            const double v = kernels::dot(
                std::span<const double>(cols.data() + i * d_total + g.lo, size_t(g.hi - g.lo)),
                std::span<const double>(cols.data() + j * d_total + g.lo, size_t(g.hi - g.lo)));
            k.k[size_t(i * n + j)] = v;
            k.k[size_t(j * n + i)] = v;
        }
    }
    return k;
}

struct LayerDirection {
    std::vector<double> g;           // flattened direction
    std::vector<double> lead_alpha;  // weights of the first solve group
    std::vector<int> cross_sign;
    int iterations = 0;
    bool solved = false;
};

}  // namespace

std::vector<DTensor> routed_merge(const Layer& layer, const std::vector<DTensor>& base,
                                  const MergeConfig& cfg) {
    const FlatLayout fl = layout_of(layer);
    std::vector<double> base_flat(static_cast<size_t>(fl.total), 0.0);
    {
        int64_t off = 0;
        for (const auto& t : base) {
            std::copy(t.data.begin(), t.data.end(), base_flat.begin() + off);
            off += int64_t(t.data.size());
        }
        if (off != fl.total) throw std::invalid_argument("routed merge: base/layer size mismatch");
    }
    const auto cols = build_columns(layer, base_flat, fl);
    const auto s = routing_weights(layer);
    std::vector<double> merged = base_flat;
    for (int64_t i = 0; i < layer.num_experts(); ++i)
        accumulate_curved(layer, fl, cols, i, cfg.eta * s[size_t(i)], merged);
    return unflatten(layer, merged);
}

namespace {

LayerDirection propagation_direction(const Layer& layer, const FlatLayout& fl,
                                     const std::vector<double>& cols, const MergeConfig& cfg,
                                     int layer_pos, std::vector<std::vector<double>>& alpha_cache) {
    const int64_t n = layer.num_experts();
    LayerDirection dir;
    dir.g.assign(size_t(fl.total), 0.0);

    const MergeStrategy st = cfg.strategy;
    if (st == MergeStrategy::average || st == MergeStrategy::ep_camex_momentum) {
        const double w = 1.0 / double(n);
        for (int64_t i = 0; i < n; ++i) accumulate_curved(layer, fl, cols, i, w, dir.g);
        dir.lead_alpha.assign(size_t(n), w);
        return dir;
    }
    if (st == MergeStrategy::ep_camex) {
        for (int64_t i = 0; i < n; ++i) accumulate_curved(layer, fl, cols, i, 1.0, dir.g);
        dir.lead_alpha.assign(size_t(n), 1.0);
        return dir;
    }

    // Nash strategies: alpha per group, re-solved on the schedule.
    const auto groups = groups_of(fl, cfg.flatten);
    const bool solve_now = cfg.recompute.solve_at(layer_pos);
    if (solve_now) alpha_cache.assign(groups.size(), {});
    if (alpha_cache.size() != groups.size())
        throw std::invalid_argument("merge: cannot reuse weights, tensor grouping changed at layer " +
                                    std::to_string(layer.index));

    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& grp = groups[gi];
        std::vector<double>& alpha = alpha_cache[gi];
        if (solve_now) {
            const GramMatrix k = gram_of_slice(cols, fl.total, n, grp);
            const NashWeights w = solve_nash(k, cfg.nash);
            if (w.status == SolveStatus::degenerate)
                throw DegenerateError(layer.index, "merge: bargaining solve degenerate at layer " +
                                                       std::to_string(layer.index));
            alpha = w.alpha;
            dir.iterations += w.iterations;
            dir.solved = true;
            if (gi == 0) {
                dir.lead_alpha = w.alpha;
                for (int64_t j = 0; j < n; ++j) {
                    const auto [self, cross] = interaction_split(k, w, j);
                    (void)self;
                    dir.cross_sign.push_back(cross > 0.0 ? 1 : (cross < 0.0 ? -1 : 0));
                }
            }
        } else {
            if (int64_t(alpha.size()) != n)
                throw std::invalid_argument(
                    "merge: cached weights have wrong expert count at layer " +
                    std::to_string(layer.index));
            if (gi == 0) dir.lead_alpha = alpha;
        }
        std::span<double> slice(dir.g.data() + grp.lo, size_t(grp.hi - grp.lo));
        for (int64_t i = 0; i < n; ++i)
            kernels::axpy(alpha[size_t(i)],
                          std::span<const double>(cols.data() + i * fl.total + grp.lo,
                                                  size_t(grp.hi - grp.lo)),
                          slice);
        if (cfg.nash.ball_radius) {
            // optional rescale of each group's direction onto the radius ball
            const double norm = kernels::norm2(slice);
            if (norm > 0.0) {
                const double s = *cfg.nash.ball_radius / norm;
                for (double& v : slice) v *= s;
            }
        }
    }
    return dir;
}

}  // namespace

MergedOutput merge(const ExpertStack& stack, const MergeConfig& cfg) {
    check_config(cfg);
    stack.validate();

    MergedOutput out;
    if (stack.layers.empty()) return out;

    for (const auto& layer : stack.layers) {
        if (layer.base.empty())
            throw std::invalid_argument("merge: layer " + std::to_string(layer.index) +
                                        " has no base expert");
        if (layer.experts.empty())
            throw std::invalid_argument("merge: layer " + std::to_string(layer.index) +
                                        " has no experts");
    }

    if (!propagates(cfg.strategy)) {
        // static merge, each layer against its own stored base
        for (size_t l = 0; l < stack.layers.size(); ++l) {
            const Layer& layer = stack.layers[l];
            const FlatLayout fl = layout_of(layer);
            std::vector<double> base_flat = flatten_base(layer, fl.total);
            out.propagated.push_back(unflatten(layer, base_flat));
            out.routed.push_back(routed_merge(layer, out.propagated.back(), cfg));
            LayerTraceRecord rec;
            rec.layer = int(l);
            rec.alpha.assign(size_t(layer.num_experts()), 0.0);
            out.trace.records.push_back(std::move(rec));
        }
        return out;
    }

    require_uniform_structure(stack);
    const FlatLayout fl = layout_of(stack.layers.front());
    std::vector<double> base_flat = flatten_base(stack.layers.front(), fl.total);

    MomentumState momentum = cfg.strategy == MergeStrategy::namex_quaternion
                                 ? MomentumState::quaternion_zeros(size_t(fl.total))
                                 : MomentumState::complex_zeros(size_t(fl.total));
    std::vector<double> displacement(static_cast<size_t>(fl.total), 0.0);
    std::vector<std::vector<double>> alpha_cache;

    for (size_t l = 0; l < stack.layers.size(); ++l) {
        const Layer& layer = stack.layers[l];
        const auto cols = build_columns(layer, base_flat, fl);

        LayerDirection dir = propagation_direction(layer, fl, cols, cfg, int(l), alpha_cache);

        out.propagated.push_back(unflatten(layer, base_flat));
        {
            // routed expert against the freshly propagated base of this layer
            const auto s = routing_weights(layer);
            std::vector<double> merged = base_flat;
            for (int64_t i = 0; i < layer.num_experts(); ++i)
                accumulate_curved(layer, fl, cols, i, cfg.eta * s[size_t(i)], merged);
            out.routed.push_back(unflatten(layer, merged));
        }

        if (is_momentum(cfg.strategy)) {
            if (cfg.strategy == MergeStrategy::namex_quaternion)
                momentum_step_quaternion(momentum, dir.g, cfg.beta_quat, cfg.gamma, displacement);
            else
                momentum_step_complex(momentum, dir.g, cfg.beta, cfg.gamma, displacement);
        } else {
            for (size_t k = 0; k < displacement.size(); ++k) displacement[k] = cfg.gamma * dir.g[k];
        }
        kernels::axpy(1.0, displacement, base_flat);

        if (cfg.record_momentum) {
            out.momentum_re.push_back(momentum.lanes[0]);
            out.momentum_im.push_back(momentum.lanes[1]);
        }

        LayerTraceRecord rec;
        rec.layer = int(l);
        rec.solved = dir.solved;
        rec.alpha = dir.lead_alpha;
        rec.g_norm = kernels::norm2(dir.g);
        rec.step_norm = kernels::norm2(displacement);
        rec.cross_sign = dir.cross_sign;
        rec.solver_iterations = dir.iterations;
        out.trace.records.push_back(std::move(rec));
    }
    return out;
}

namespace {

MergedOutput merge_checked(const ExpertStack& stack, const MergeConfig& cfg,
                           std::initializer_list<MergeStrategy> allowed, const char* op) {
    if (std::find(allowed.begin(), allowed.end(), cfg.strategy) == allowed.end())
        throw std::invalid_argument(std::string(op) + ": wrong strategy '" +
                                    strategy_name(cfg.strategy) + "'");
    return merge(stack, cfg);
}

}  // namespace

MergedOutput merge_average(const ExpertStack& stack, const MergeConfig& cfg) {
    return merge_checked(stack, cfg, {MergeStrategy::average, MergeStrategy::ep_camex},
                         "merge_average");
}

MergedOutput merge_camex_static(const ExpertStack& stack, const MergeConfig& cfg) {
    return merge_checked(stack, cfg, {MergeStrategy::camex_static}, "merge_camex_static");
}

MergedOutput merge_namex(const ExpertStack& stack, const MergeConfig& cfg) {
    return merge_checked(stack, cfg, {MergeStrategy::namex}, "merge_namex");
}

MergedOutput merge_namex_momentum(const ExpertStack& stack, const MergeConfig& cfg) {
    return merge_checked(stack, cfg,
                         {MergeStrategy::namex_momentum, MergeStrategy::namex_quaternion,
                          MergeStrategy::ep_camex_momentum},
                         "merge_namex_momentum");
}

ExpertStack to_checkpoint(const MergedOutput& out) {
    ExpertStack stack;
    for (size_t l = 0; l < out.propagated.size(); ++l) {
        Layer layer;
        layer.index = int(l);
        for (const auto& dt : out.propagated[l]) {
            Tensor t;
            t.name = dt.name;
            t.shape = dt.shape;
            t.data.reserve(dt.data.size());
            for (double v : dt.data) t.data.push_back(float(v));
            layer.base.push_back(std::move(t));
        }
        Expert merged;
        merged.name = "merged";
        for (const auto& dt : out.routed[l]) {
            Tensor t;
            t.name = dt.name;
            t.shape = dt.shape;
            t.data.reserve(dt.data.size());
            for (double v : dt.data) t.data.push_back(float(v));
            merged.tensors.push_back(std::move(t));
        }
        layer.experts.push_back(std::move(merged));
        stack.layers.push_back(std::move(layer));
    }
    return stack;
}

void write_trace_csv(const PropagationTrace& trace, MergeStrategy strategy,
                     const std::filesystem::path& path) {
    size_t max_n = 0;
    for (const auto& r : trace.records) max_n = std::max(max_n, r.alpha.size());

    std::string body = "layer,strategy";
    for (size_t i = 1; i <= max_n; ++i) body += ",alpha_" + std::to_string(i);
    body += ",g_norm,step_norm,solver_iters\n";

    char buf[64];
    for (const auto& r : trace.records) {
        body += std::to_string(r.layer);
        body += ",";
        body += strategy_name(strategy);
        for (size_t i = 0; i < max_n; ++i) {
            std::snprintf(buf, sizeof buf, ",%.17g", i < r.alpha.size() ? r.alpha[i] : 0.0);
            body += buf;
        }
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%d\n", r.g_norm, r.step_norm,
                      r.solver_iterations);
        body += buf;
    }

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream outf(tmp, std::ios::binary | std::ios::trunc);
        if (!outf) throw IoError("cannot write " + tmp);
        outf << body;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

}  // namespace namex
