// namex command line: checkpoint merging, bargaining solves, stability
// sweeps, synthetic simulation and expert-interaction analysis.
//
// Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 degenerate
// bargaining solve.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "namex/analysis.hpp"
#include "namex/errors.hpp"
#include "namex/kernels.hpp"
#include "namex/merge_engine.hpp"
#include "namex/nash_core.hpp"
#include "namex/stability_lab.hpp"
#include "namex/synthetic.hpp"
#include "namex/tensor_store.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using nlohmann::json;

namex::MergeStrategy parse_strategy(const std::string& s) {
    using MS = namex::MergeStrategy;
    if (s == "average") return MS::average;
    if (s == "camex") return MS::camex_static;
    if (s == "ep-camex") return MS::ep_camex;
    if (s == "namex") return MS::namex;
    if (s == "namex-mom") return MS::namex_momentum;
    if (s == "namex-quat") return MS::namex_quaternion;
    if (s == "ep-camex-mom") return MS::ep_camex_momentum;
    throw std::invalid_argument("unknown strategy '" + s + "'");
}

struct MergeFlags {
    std::string strategy = "namex";
    double gamma = 1.0;
    double eta = 1.0;
    double beta_re = 0.0;
    double beta_im = 0.0;
    std::vector<double> beta_quat;
    std::string recompute = "first";
    double tolerance = 1e-10;
    int max_iters = 20;
    std::string flatten = "layer";

    void attach(CLI::App* cmd) {
        cmd->add_option("--strategy", strategy, "merge strategy")
            ->check(CLI::IsMember({"average", "camex", "ep-camex", "namex", "namex-mom",
                                   "namex-quat", "ep-camex-mom"}));
        cmd->add_option("--gamma", gamma, "propagation step size");
        cmd->add_option("--eta", eta, "routed-merge step size");
        cmd->add_option("--beta-re", beta_re, "momentum coefficient, real part");
        cmd->add_option("--beta-im", beta_im, "momentum coefficient, imaginary part");
        cmd->add_option("--beta-quat", beta_quat, "quaternion momentum coefficient w,x,y,z")
            ->delimiter(',')
            ->expected(4);
        cmd->add_option("--recompute-every", recompute,
                        "bargaining schedule: layer interval or 'first'");
        cmd->add_option("--tolerance", tolerance, "solver residual tolerance");
        cmd->add_option("--max-iters", max_iters, "solver iteration budget");
        cmd->add_option("--flatten", flatten, "weight granularity")
            ->check(CLI::IsMember({"layer", "tensor"}));
    }

    namex::MergeConfig to_config() const {
        namex::MergeConfig cfg;
        cfg.strategy = parse_strategy(strategy);
        cfg.gamma = gamma;
        cfg.eta = eta;
        cfg.beta = {beta_re, beta_im};
        if (!beta_quat.empty())
            cfg.beta_quat = {beta_quat[0], beta_quat[1], beta_quat[2], beta_quat[3]};
        if (recompute == "first") {
            cfg.recompute = namex::RecomputeSchedule::first();
        } else {
            int every = 0;
            try {
                size_t used = 0;
                every = std::stoi(recompute, &used);
                if (used != recompute.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw std::invalid_argument("--recompute-every expects an integer or 'first'");
            }
            cfg.recompute = namex::RecomputeSchedule::every_n(every);
        }
        cfg.nash.tolerance = tolerance;
        cfg.nash.max_iterations = max_iters;
        cfg.flatten =
            flatten == "tensor" ? namex::FlattenMode::per_tensor : namex::FlattenMode::per_layer;
        return cfg;
    }
};

const char* status_name(namex::SolveStatus s) {
    switch (s) {
        case namex::SolveStatus::converged: return "converged";
        case namex::SolveStatus::budget_exhausted: return "budget_exhausted";
        case namex::SolveStatus::degenerate: return "degenerate";
    }
    return "?";
}

int cmd_merge(const std::string& input, const std::string& output, const std::string& trace,
              const MergeFlags& flags) {
    const namex::ExpertStack stack = namex::read_checkpoint(input);
    const namex::MergeConfig cfg = flags.to_config();
    const namex::MergedOutput out = namex::merge(stack, cfg);
    namex::write_checkpoint(namex::to_checkpoint(out), output);
    if (!trace.empty()) namex::write_trace_csv(out.trace, cfg.strategy, trace);
    return 0;
}

int cmd_solve(const std::string& input, double tolerance, int max_iters) {
    const namex::DomainMatrix g_mat = namex::read_problem_csv(input);
    const namex::GramMatrix k = namex::gram(g_mat);
    namex::NashConfig cfg;
    cfg.tolerance = tolerance;
    cfg.max_iterations = max_iters;
    const namex::NashWeights w = namex::solve_nash(k, cfg);
    if (w.status == namex::SolveStatus::degenerate) {
        std::fprintf(stderr, "solve: degenerate system (zero-norm domain vector)\n");
        return 3;
    }

    std::vector<double> g(static_cast<size_t>(g_mat.d), 0.0);
    namex::kernels::mat_vec_cols(g_mat.cols.data(), size_t(g_mat.d), size_t(g_mat.n),
                                 w.alpha.data(), g.data());
    const auto u = namex::utilities(g_mat, g);

    json out;
    out["alpha"] = w.alpha;
    out["residual"] = w.residual;
    out["iterations"] = w.iterations;
    out["status"] = status_name(w.status);
    out["direction_norm"] = namex::kernels::norm2(g);
    out["utilities"] = u;
    std::vector<int> signs;
    for (int64_t j = 0; j < k.n; ++j) {
        double cross = 0.0;
        for (int64_t i = 0; i < k.n; ++i)
            if (i != j) cross += w.alpha[size_t(i)] * k.at(i, j);
        signs.push_back(cross > 0.0 ? 1 : (cross < 0.0 ? -1 : 0));
    }
    out["cross_sign"] = signs;
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
}

int cmd_stability(bool do_sweep, int grid, double r, double u, double gamma, double alpha_sum,
                  const std::string& out_path) {
    if (do_sweep) {
        const auto rows = namex::sweep(grid, gamma, alpha_sum);
        namex::write_sweep_csv(rows, out_path);
        return 0;
    }
    const namex::StabilityReport rep = namex::fujiwara_region({r, u, gamma, alpha_sum});
    json out;
    out["r"] = r;
    out["u"] = u;
    out["gamma"] = gamma;
    out["alpha_sum"] = alpha_sum;
    out["rho"] = rep.spectral_radius;
    out["fujiwara"] = rep.fujiwara_bound;
    out["in_region"] = rep.in_sufficient_region;
    json eigs = json::array();
    for (const auto& ev : rep.eigenvalues) eigs.push_back({ev.real(), ev.imag()});
    out["eigenvalues"] = eigs;
    std::printf("%s\n", out.dump(2).c_str());
    return 0;
}

int cmd_simulate(int layers, int experts, int64_t dim, uint64_t seed, double scale, bool frozen,
                 const MergeFlags& flags, const std::string& trace) {
    namex::SyntheticSpec spec;
    spec.layers = layers;
    spec.experts = experts;
    spec.dim = dim;
    spec.scale = scale;
    spec.seed = seed;
    spec.frozen = frozen;
    const namex::ExpertStack stack = namex::make_synthetic_stack(spec);

    MergeFlags adjusted = flags;
    if (frozen) adjusted.recompute = "first";  // constant forcing needs one shared alpha
    const namex::MergeConfig cfg = adjusted.to_config();
    const namex::MergedOutput out = namex::merge(stack, cfg);
    if (!trace.empty()) namex::write_trace_csv(out.trace, cfg.strategy, trace);

    json summary;
    summary["layers"] = layers;
    summary["experts"] = experts;
    summary["dim"] = dim;
    summary["seed"] = seed;
    summary["strategy"] = namex::strategy_name(cfg.strategy);
    summary["solves"] = out.trace.total_solves();
    double alpha_sum = 0.0;
    if (!out.trace.records.empty())
        for (double a : out.trace.records.front().alpha) alpha_sum += a;
    summary["alpha_sum"] = alpha_sum;
    if (alpha_sum > 0.0 && cfg.strategy != namex::MergeStrategy::camex_static) {
        const namex::StabilityReport rep =
            namex::fujiwara_region({cfg.beta.re, cfg.beta.im, cfg.gamma, alpha_sum});
        summary["rho"] = rep.spectral_radius;
        summary["in_region"] = rep.in_sufficient_region;
    }
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

int cmd_analyze(const std::string& input, int layer_index, const std::string& mode, int probes,
                uint64_t seed, const std::string& out_csv, const std::string& out_meta,
                bool pareto, int64_t samples, double epsilon) {
    const namex::ExpertStack stack = namex::read_checkpoint(input);
    if (layer_index < 0 || size_t(layer_index) >= stack.layers.size())
        throw std::invalid_argument("analyze: layer index out of range");
    const namex::Layer& layer = stack.layers[size_t(layer_index)];

    const auto source = mode == "activations" ? namex::SimilaritySource::synthetic_activations
                                              : namex::SimilaritySource::parameters;
    const namex::SimilarityMatrix m = namex::cosine_similarity(layer, source, seed, probes);
    const std::string meta =
        out_meta.empty() ? out_csv.substr(0, out_csv.find_last_of('.')) + ".meta.json" : out_meta;
    namex::write_similarity_csv(m, out_csv, meta);

    if (pareto) {
        const namex::DomainMatrix g_mat = namex::domain_vectors(layer);
        const namex::GramMatrix k = namex::gram(g_mat);
        namex::NashConfig ncfg;
        ncfg.max_iterations = 100;
        const namex::NashWeights w = namex::solve_nash(k, ncfg);
        if (w.status == namex::SolveStatus::degenerate) {
            std::fprintf(stderr, "analyze: degenerate bargaining system at layer %d\n",
                         layer_index);
            return 3;
        }
        std::vector<double> g = namex::direction(g_mat, w, ncfg);
        const double g_norm = namex::kernels::norm2(g);
        const double eps = epsilon > 0.0 ? epsilon : g_norm;
        if (eps < g_norm) {
            const double s = eps / g_norm;
            for (auto& v : g) v *= s;
        }
        const namex::DominationVerdict verdict =
            namex::pareto_check(g_mat, g, eps, samples, seed);
        json out;
        out["layer"] = layer_index;
        out["dominated"] = verdict.dominated;
        out["samples_tested"] = verdict.samples_tested;
        out["ball_radius"] = eps;
        std::printf("%s\n", out.dump(2).c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("NAMEX_THREADS")) {
#ifdef _OPENMP
        const int n = std::atoi(threads);
        if (n > 0) omp_set_num_threads(n);
#endif
    }

    CLI::App app{"Nash bargaining expert merging toolkit"};
    app.require_subcommand(1);

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "merge a checkpoint");
    std::string merge_input, merge_output, merge_trace;
    MergeFlags merge_flags;
    merge_cmd->add_option("--input", merge_input, "checkpoint directory")->required();
    merge_cmd->add_option("--output", merge_output, "output checkpoint directory")->required();
    merge_cmd->add_option("--trace", merge_trace, "propagation trace CSV");
    merge_flags.attach(merge_cmd);

    // solve
    auto* solve_cmd = app.add_subcommand("solve", "solve one bargaining instance from CSV");
    std::string solve_input;
    double solve_tol = 1e-10;
    int solve_iters = 20;
    solve_cmd->add_option("--input", solve_input, "CSV of domain vectors, one column per expert")
        ->required();
    solve_cmd->add_option("--tolerance", solve_tol, "residual tolerance");
    solve_cmd->add_option("--max-iters", solve_iters, "iteration budget");

    // stability
    auto* stab_cmd = app.add_subcommand("stability", "spectral radius and sufficient region");
    bool stab_sweep = false;
    int stab_grid = 201;
    double stab_r = 0.0, stab_u = 0.0, stab_gamma = 2.0, stab_alpha = 0.5;
    std::string stab_out = "sweep.csv";
    stab_cmd->add_flag("--sweep", stab_sweep, "sweep (r,u) in [-1,1]^2 and write a CSV grid");
    stab_cmd->add_option("--grid", stab_grid, "sweep grid resolution");
    stab_cmd->add_option("--r", stab_r, "Re(beta)");
    stab_cmd->add_option("--u", stab_u, "Im(beta)");
    stab_cmd->add_option("--gamma", stab_gamma, "propagation step size");
    stab_cmd->add_option("--alpha-sum", stab_alpha, "sum of bargaining weights");
    stab_cmd->add_option("--out", stab_out, "sweep CSV path");

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "run a strategy on a seeded synthetic stack");
    int sim_layers = 12, sim_experts = 8;
    int64_t sim_dim = 64;
    uint64_t sim_seed = 0;
    double sim_scale = 1.0;
    bool sim_frozen = false;
    std::string sim_trace = "trace.csv";
    MergeFlags sim_flags;
    sim_cmd->add_option("--layers", sim_layers, "layer count");
    sim_cmd->add_option("--experts", sim_experts, "experts per layer");
    sim_cmd->add_option("--dim", sim_dim, "parameters per layer");
    sim_cmd->add_option("--seed", sim_seed, "generator seed");
    sim_cmd->add_option("--scale", sim_scale, "entry scale");
    sim_cmd->add_flag("--frozen-alpha", sim_frozen,
                      "replicate one expert set across layers (stationary forcing)");
    sim_cmd->add_option("--trace", sim_trace, "trace CSV path");
    sim_flags.attach(sim_cmd);

    // analyze
    auto* an_cmd = app.add_subcommand("analyze", "expert similarity and Pareto diagnostics");
    std::string an_input, an_mode = "params", an_out = "similarity.csv", an_meta;
    int an_layer = 0, an_probes = 256;
    uint64_t an_seed = 0;
    bool an_pareto = false;
    int64_t an_samples = 10000;
    double an_eps = 0.0;
    an_cmd->add_option("--input", an_input, "checkpoint directory")->required();
    an_cmd->add_option("--layer", an_layer, "layer position");
    an_cmd->add_option("--mode", an_mode, "similarity source")
        ->check(CLI::IsMember({"params", "activations"}));
    an_cmd->add_option("--probes", an_probes, "probe count for activation mode");
    an_cmd->add_option("--seed", an_seed, "probe/sampling seed");
    an_cmd->add_option("--out", an_out, "similarity CSV path");
    an_cmd->add_option("--meta", an_meta, "metadata JSON path");
    an_cmd->add_flag("--pareto", an_pareto, "domination check on the layer's Nash direction");
    an_cmd->add_option("--samples", an_samples, "sphere samples for the domination search");
    an_cmd->add_option("--epsilon", an_eps, "ball radius (default: the direction norm)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (merge_cmd->parsed()) return cmd_merge(merge_input, merge_output, merge_trace, merge_flags);
        if (solve_cmd->parsed()) return cmd_solve(solve_input, solve_tol, solve_iters);
        if (stab_cmd->parsed())
            return cmd_stability(stab_sweep, stab_grid, stab_r, stab_u, stab_gamma, stab_alpha,
                                 stab_out);
        if (sim_cmd->parsed())
            return cmd_simulate(sim_layers, sim_experts, sim_dim, sim_seed, sim_scale, sim_frozen,
                                sim_flags, sim_trace);
        if (an_cmd->parsed())
            return cmd_analyze(an_input, an_layer, an_mode, an_probes, an_seed, an_out, an_meta,
                               an_pareto, an_samples, an_eps);
    } catch (const namex::DegenerateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const namex::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
