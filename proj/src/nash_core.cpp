#include "namex/nash_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "namex/kernels.hpp"

namespace namex {

namespace {

void expert_column(const Layer& layer, int64_t expert, double* out) {
    int64_t off = 0;
    for (size_t t = 0; t < layer.base.size(); ++t) {
        const auto& bt = layer.base[t];
        const auto& et = layer.experts[size_t(expert)].tensors[t];
        kernels::sub_f32(et.data, bt.data, std::span<double>(out + off, size_t(bt.numel())));
        off += bt.numel();
    }
}

}  // namespace

DomainMatrix domain_vectors(const Layer& layer) {
    if (layer.experts.empty()) throw std::invalid_argument("domain_vectors: empty expert list");
    DomainMatrix g;
    g.d = layer.numel();
    g.n = layer.num_experts();
    g.cols.resize(size_t(g.d * g.n));
    for (int64_t i = 0; i < g.n; ++i) expert_column(layer, i, g.col(i));
    return g;
}

std::vector<DomainMatrix> domain_vectors_per_tensor(const Layer& layer) {
    if (layer.experts.empty()) throw std::invalid_argument("domain_vectors: empty expert list");
    std::vector<DomainMatrix> out;
    out.reserve(layer.base.size());
    for (size_t t = 0; t < layer.base.size(); ++t) {
        DomainMatrix g;
        g.d = layer.base[t].numel();
        g.n = layer.num_experts();
        g.cols.resize(size_t(g.d * g.n));
        for (int64_t i = 0; i < g.n; ++i)
            kernels::sub_f32(layer.experts[size_t(i)].tensors[t].data, layer.base[t].data,
                             std::span<double>(g.col(i), size_t(g.d)));
        out.push_back(std::move(g));
    }
    return out;
}

GramMatrix gram(const DomainMatrix& g) {
    GramMatrix k;
    k.n = g.n;
    k.k.resize(size_t(g.n * g.n));
    kernels::gram(g.cols.data(), size_t(g.d), size_t(g.n), k.k.data());
    return k;
}

NashWeights solve_nash(const GramMatrix& k, const NashConfig& cfg) {
    const int64_t n = k.n;
    if (n == 0) throw std::invalid_argument("solve_nash: empty Gram matrix");
    if (cfg.tolerance <= 0.0 || cfg.max_iterations < 1)
        throw std::invalid_argument("solve_nash: invalid config");
    double max_diag = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t i = 0; i < n; ++i)
            if (!std::isfinite(k.k[size_t(j * n + i)]))
                throw std::invalid_argument("solve_nash: non-finite Gram entry");
        max_diag = std::max(max_diag, k.at(j, j));
    }

    NashWeights w;
    w.alpha.assign(size_t(n), 0.0);
    for (int64_t j = 0; j < n; ++j) {
        if (k.at(j, j) <= 1e-12 * max_diag) {
            w.status = SolveStatus::degenerate;
            w.residual = std::numeric_limits<double>::infinity();
            return w;
        }
        w.alpha[size_t(j)] = 1.0 / std::sqrt(k.at(j, j));
    }

    // The system K alpha = 1/alpha is the stationarity condition of the
    // strictly convex barrier objective
    //   Psi(alpha) = alpha' K alpha / 2 - sum_j log(alpha_j),
    // so a damped Newton descent on Psi cannot stall at the positivity
    // boundary the way a pure residual iteration can.
    std::vector<double> k_alpha(w.alpha.size());
    std::vector<double> grad(w.alpha.size());
    std::vector<double> hess(w.alpha.size() * w.alpha.size());
    std::vector<double> step(w.alpha.size());
    std::vector<double> trial(w.alpha.size());
    std::vector<double> scratch(w.alpha.size());

    const auto objective = [&](const std::vector<double>& a, std::vector<double>& ka) {
        double quad = 0.0, barrier = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += k.at(i, j) * a[size_t(j)];
            ka[size_t(i)] = s;
            quad += a[size_t(i)] * s;
            barrier -= std::log(a[size_t(i)]);
        }
        return 0.5 * quad + barrier;
    };

    double psi = objective(w.alpha, k_alpha);
    double res = 0.0;
    for (int64_t j = 0; j < n; ++j)
        res = std::max(res, std::abs(w.alpha[size_t(j)] * k_alpha[size_t(j)] - 1.0));

    std::vector<double> best_alpha = w.alpha;
    double best_res = res;
    int iter = 0;

    while (res > cfg.tolerance && iter < cfg.max_iterations) {
        // grad = K alpha - 1/alpha, hess = K + diag(1/alpha^2)
        for (int64_t i = 0; i < n; ++i) {
            grad[size_t(i)] = k_alpha[size_t(i)] - 1.0 / w.alpha[size_t(i)];
            for (int64_t j = 0; j < n; ++j) hess[size_t(i * n + j)] = k.at(i, j);
            hess[size_t(i * n + i)] += 1.0 / (w.alpha[size_t(i)] * w.alpha[size_t(i)]);
        }
        for (int64_t j = 0; j < n; ++j) step[size_t(j)] = -grad[size_t(j)];
        if (!solve_linear(hess, step, n)) break;  // PD in exact arithmetic

        double descent = 0.0;
        for (int64_t j = 0; j < n; ++j) descent += grad[size_t(j)] * step[size_t(j)];
        const double decrement2 = -descent;  // squared Newton decrement

        double t = 1.0;
        for (int64_t j = 0; j < n; ++j)
            if (step[size_t(j)] < 0.0)
                t = std::min(t, -0.99 * w.alpha[size_t(j)] / step[size_t(j)]);

        double psi_new;
        if (decrement2 > 0.0625) {
            // damped phase: Armijo backtracking on Psi
            for (int back = 0;; ++back) {
                for (int64_t j = 0; j < n; ++j)
                    trial[size_t(j)] = w.alpha[size_t(j)] + t * step[size_t(j)];
                psi_new = objective(trial, scratch);
                if (psi_new <= psi + 1e-4 * t * descent || back >= 60) break;
                t *= 0.5;
            }
        } else {
            // quadratic phase: the barrier objective is self-concordant, the
            // full capped step converges without a search (and the Psi
            // decrease is below rounding here anyway)
            for (int64_t j = 0; j < n; ++j)
                trial[size_t(j)] = w.alpha[size_t(j)] + t * step[size_t(j)];
            psi_new = objective(trial, scratch);
        }

        w.alpha = trial;
        k_alpha = scratch;
        psi = psi_new;
        res = 0.0;
        for (int64_t j = 0; j < n; ++j)
            res = std::max(res, std::abs(w.alpha[size_t(j)] * k_alpha[size_t(j)] - 1.0));
        ++iter;
        if (res < best_res) {
            best_res = res;
            best_alpha = w.alpha;
        }
    }

    w.iterations = iter;
    if (res <= cfg.tolerance) {
        w.residual = res;
        w.status = SolveStatus::converged;
    } else {
        w.alpha = best_alpha;
        w.residual = best_res;
        w.status = SolveStatus::budget_exhausted;
    }
    return w;
}

std::vector<double> direction(const DomainMatrix& g, const NashWeights& w, const NashConfig& cfg) {
    if (w.status != SolveStatus::converged)
        throw std::invalid_argument("direction: weights not converged");
    if (int64_t(w.alpha.size()) != g.n)
        throw std::invalid_argument("direction: weight/matrix dimension mismatch");
    std::vector<double> out(static_cast<size_t>(g.d), 0.0);
    kernels::mat_vec_cols(g.cols.data(), size_t(g.d), size_t(g.n), w.alpha.data(), out.data());
    if (cfg.ball_radius) {
        if (!(*cfg.ball_radius > 0.0))
            throw std::invalid_argument("direction: ball radius must be positive");
        const double norm = kernels::norm2(out);
        if (norm > 0.0) {
            const double s = *cfg.ball_radius / norm;
            for (double& v : out) v *= s;
        }
    }
    return out;
}

std::pair<double, double> interaction_split(const GramMatrix& k, const NashWeights& w, int64_t j) {
    if (w.status != SolveStatus::converged)
        throw std::invalid_argument("interaction_split: weights not converged");
    if (j < 0 || j >= k.n) throw std::out_of_range("interaction_split: expert index out of range");
    const double self_term = w.alpha[size_t(j)] * k.at(j, j);
    double cross = 0.0;
    for (int64_t i = 0; i < k.n; ++i)
        if (i != j) cross += w.alpha[size_t(i)] * k.at(i, j);
    return {self_term, cross};
}

}  // namespace namex
