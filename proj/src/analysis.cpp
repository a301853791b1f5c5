#include "namex/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "namex/errors.hpp"
#include "namex/kernels.hpp"
#include "namex/prng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace namex {

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = kernels::serial::norm2(a);
    const double nb = kernels::serial::norm2(b);
    if (na == 0.0 && nb == 0.0) return 1.0;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return kernels::serial::dot(a, b) / (na * nb);
}

std::vector<double> flatten_expert(const Expert& e) {
    std::vector<double> flat;
    for (const auto& t : e.tensors)
        for (float v : t.data) flat.push_back(double(v));
    return flat;
}

bool is_two_tensor_mlp(const Layer& layer) {
    if (layer.base.size() != 2) return false;
    const auto& w1 = layer.base[0].shape;
    const auto& w2 = layer.base[1].shape;
    return w1.size() == 2 && w2.size() == 2 && w1[1] == w2[0];
}

// y = max(0, x W1) W2 for row-major W1 [in,hidden], W2 [hidden,out]
void mlp_forward(const Expert& e, std::span<const double> x, std::vector<double>& hidden,
                 std::vector<double>& y) {
    const auto& w1 = e.tensors[0];
    const auto& w2 = e.tensors[1];
    const int64_t in = w1.shape[0], hid = w1.shape[1], out = w2.shape[1];
    hidden.assign(size_t(hid), 0.0);
    for (int64_t i = 0; i < in; ++i) {
        const double xi = x[size_t(i)];
        if (xi == 0.0) continue;
        const float* row = w1.data.data() + i * hid;
        for (int64_t h = 0; h < hid; ++h) hidden[size_t(h)] += xi * double(row[h]);
    }
    for (auto& h : hidden) h = std::max(0.0, h);
    y.assign(size_t(out), 0.0);
    for (int64_t h = 0; h < hid; ++h) {
        const double hv = hidden[size_t(h)];
        if (hv == 0.0) continue;
        const float* row = w2.data.data() + h * out;
        for (int64_t o = 0; o < out; ++o) y[size_t(o)] += hv * double(row[o]);
    }
}

}  // namespace

SimilarityMatrix cosine_similarity(const Layer& layer, SimilaritySource source,
                                   uint64_t probe_seed, int probes) {
    const int64_t n = layer.num_experts();
    if (n == 0) throw std::invalid_argument("cosine_similarity: empty expert list");

    SimilarityMatrix m;
    m.n = n;
    m.values.assign(size_t(n * n), 0.0);
    m.source = source;
    m.seed = probe_seed;

    if (source == SimilaritySource::parameters) {
        std::vector<std::vector<double>> flats;
        for (const auto& e : layer.experts) flats.push_back(flatten_expert(e));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i; j < n; ++j) {
                const double c = cosine(flats[size_t(i)], flats[size_t(j)]);
                m.values[size_t(i * n + j)] = c;
                m.values[size_t(j * n + i)] = c;
            }
        return m;
    }

    if (!is_two_tensor_mlp(layer))
        throw std::invalid_argument(
            "cosine_similarity: activation mode needs two-tensor MLP experts");
    if (probes < 1) throw std::invalid_argument("cosine_similarity: need at least one probe");
    m.probes = probes;

    const int64_t in_dim = layer.base[0].shape[0];
    // per-probe cosines land in a dense table and are summed in probe order,
    // so the result does not depend on thread scheduling
    std::vector<double> per_probe(size_t(probes) * size_t(n * n), 0.0);
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
        std::vector<double> x(static_cast<size_t>(in_dim), 0.0);
        std::vector<double> hidden;
        std::vector<std::vector<double>> outs(static_cast<size_t>(n));
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int pr = 0; pr < probes; ++pr) {
            auto rng = stream_for(probe_seed, uint64_t(pr));
            for (auto& v : x) v = rng.normal();
            for (int64_t i = 0; i < n; ++i)
                mlp_forward(layer.experts[size_t(i)], x, hidden, outs[size_t(i)]);
            double* row = per_probe.data() + size_t(pr) * size_t(n * n);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = i; j < n; ++j)
                    row[size_t(i * n + j)] = cosine(outs[size_t(i)], outs[size_t(j)]);
        }
    }
    std::vector<double> acc(size_t(n * n), 0.0);
    for (int pr = 0; pr < probes; ++pr) {
        const double* row = per_probe.data() + size_t(pr) * size_t(n * n);
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += row[k];
    }
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i; j < n; ++j) {
            const double c = acc[size_t(i * n + j)] / double(probes);
            m.values[size_t(i * n + j)] = c;
            m.values[size_t(j * n + i)] = c;
        }
    return m;
}

void write_similarity_csv(const SimilarityMatrix& m, const std::filesystem::path& csv_path,
                          const std::filesystem::path& meta_path) {
    std::string body;
    char buf[48];
    for (int64_t i = 0; i < m.n; ++i) {
        for (int64_t j = 0; j < m.n; ++j) {
            std::snprintf(buf, sizeof buf, j + 1 < m.n ? "%.6f," : "%.6f\n", m.at(i, j));
            body += buf;
        }
    }
    const auto write_atomic = [](const std::filesystem::path& path, const std::string& bytes) {
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write " + tmp);
            out << bytes;
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
    };
    write_atomic(csv_path, body);

    nlohmann::json meta;
    meta["source"] = m.source == SimilaritySource::parameters ? "parameters" : "synthetic_activations";
    meta["experts"] = m.n;
    meta["probes"] = m.probes;
    meta["seed"] = m.seed;
    meta["probe_distribution"] = "standard_normal";
    meta["nonlinearity"] = "relu";
    meta["generator"] = "xoshiro256++";
    write_atomic(meta_path, meta.dump(2) + "\n");
}

std::vector<double> utilities(const DomainMatrix& g_mat, std::span<const double> g) {
    if (int64_t(g.size()) != g_mat.d)
        throw std::invalid_argument("utilities: direction dimension mismatch");
    std::vector<double> u(static_cast<size_t>(g_mat.n), 0.0);
    for (int64_t i = 0; i < g_mat.n; ++i)
        u[size_t(i)] =
            kernels::dot(std::span<const double>(g_mat.col(i), size_t(g_mat.d)), g);
    return u;
}

DominationVerdict pareto_check(const DomainMatrix& g_mat, std::span<const double> g,
                               double ball_radius, int64_t samples, uint64_t seed,
                               const ParetoConfig& cfg) {
    if (!(ball_radius > 0.0)) throw std::invalid_argument("pareto_check: zero ball radius");
    if (samples < 1000) throw std::invalid_argument("pareto_check: need at least 1000 samples");
    const double g_norm = kernels::norm2(g);
    if (g_norm > ball_radius * (1.0 + 1e-9))
        throw std::invalid_argument("pareto_check: direction lies outside the ball");

    const std::vector<double> base_u = utilities(g_mat, g);
    const int64_t n = g_mat.n;
    const int64_t d = g_mat.d;

    const auto dominates = [&](std::span<const double> y) {
        const std::vector<double> uy = utilities(g_mat, y);
        bool strict = false;
        for (int64_t i = 0; i < n; ++i) {
            if (uy[size_t(i)] < base_u[size_t(i)] - cfg.weak_margin) return false;
            if (uy[size_t(i)] >= base_u[size_t(i)] + cfg.strict_margin) strict = true;
        }
        return strict;
    };

    DominationVerdict verdict;

    // radial candidate first: utilities scale with the norm, so an interior
    // direction is beaten by its own rescale
    if (g_norm > 0.0) {
        std::vector<double> radial(g.begin(), g.end());
        const double s = ball_radius / g_norm;
        for (auto& v : radial) v *= s;
        ++verdict.samples_tested;
        if (dominates(radial)) {
            verdict.dominated = true;
            verdict.witness = std::move(radial);
            return verdict;
        }
    }

    // seeded sphere samples; first witness by sample index
    int64_t found = samples;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(min : found)
#endif
    for (int64_t idx = 0; idx < samples; ++idx) {
        if (idx >= found) continue;
        auto rng = stream_for(seed, uint64_t(idx));
        std::vector<double> y(static_cast<size_t>(d), 0.0);
        double norm = 0.0;
        for (auto& v : y) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (auto& v : y) v *= ball_radius / norm;
        if (dominates(y)) found = std::min(found, idx);
    }
    verdict.samples_tested += samples;
    if (found < samples) {
        auto rng = stream_for(seed, uint64_t(found));
        std::vector<double> y(static_cast<size_t>(d), 0.0);
        double norm = 0.0;
        for (auto& v : y) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : y) v *= ball_radius / norm;
        verdict.dominated = true;
        verdict.witness = std::move(y);
    }
    return verdict;
}

}  // namespace namex
