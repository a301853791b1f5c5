#include "namex/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace namex::kernels {

namespace {

// Below this element count the parallel entry points fall through to the
// serial body; fork/join overhead dominates otherwise.
constexpr size_t kParallelCutoff = 16384;

bool use_parallel(size_t n) {
#ifdef _OPENMP
    return n >= kParallelCutoff && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
    (void)n;
    return false;
#endif
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double dot_f32(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void sub_f32(std::span<const float> a, std::span<const float> b, std::span<double> out) {
    for (size_t i = 0; i < a.size(); ++i) out[i] = double(a[i]) - double(b[i]);
}

void sub_f32_f64(std::span<const float> a, std::span<const double> b, std::span<double> out) {
    for (size_t i = 0; i < a.size(); ++i) out[i] = double(a[i]) - b[i];
}

void mat_vec_cols(const double* cols, size_t d, size_t n, const double* w, double* out) {
    for (size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += w[i] * cols[i * d + k];
        out[k] = s;
    }
}

void gram(const double* cols, size_t d, size_t n, double* K) {
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            double s = 0.0;
            const double* ci = cols + i * d;
            const double* cj = cols + j * d;
            for (size_t k = 0; k < d; ++k) s += ci[k] * cj[k];
            K[i * n + j] = s;
            K[j * n + i] = s;
        }
    }
}

void complex_step(std::span<double> re, std::span<double> im, std::span<const double> g,
                  double beta_re, double beta_im, double gamma, std::span<double> disp) {
    for (size_t k = 0; k < re.size(); ++k) {
        const double nr = beta_re * re[k] - beta_im * im[k] + g[k];
        const double ni = beta_im * re[k] + beta_re * im[k];
        re[k] = nr;
        im[k] = ni;
        disp[k] = gamma * nr;
    }
}

}  // namespace serial

namespace {

// Deterministic parallel reduction: each thread sums a contiguous chunk,
// partials are combined in thread order.
template <typename F>
double chunked_reduce(size_t n, F&& body) {
#ifdef _OPENMP
    const int nt = omp_get_max_threads();
    std::vector<double> partial(size_t(nt), 0.0);
#pragma omp parallel num_threads(nt)
    {
        const int t = omp_get_thread_num();
        const size_t chunk = (n + size_t(nt) - 1) / size_t(nt);
        const size_t lo = std::min(n, size_t(t) * chunk);
        const size_t hi = std::min(n, lo + chunk);
        partial[size_t(t)] = body(lo, hi);
    }
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
#else
    return body(0, n);
#endif
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
    if (!use_parallel(a.size())) return serial::dot(a, b);
    return chunked_reduce(a.size(), [&](size_t lo, size_t hi) {
        double s = 0.0;
        for (size_t i = lo; i < hi; ++i) s += a[i] * b[i];
        return s;
    });
}

double dot_f32(std::span<const float> a, std::span<const float> b) {
    if (!use_parallel(a.size())) return serial::dot_f32(a, b);
    return chunked_reduce(a.size(), [&](size_t lo, size_t hi) {
        double s = 0.0;
        for (size_t i = lo; i < hi; ++i) s += double(a[i]) * double(b[i]);
        return s;
    });
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
    if (!use_parallel(x.size())) return serial::axpy(a, x, y);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

void sub_f32(std::span<const float> a, std::span<const float> b, std::span<double> out) {
    if (!use_parallel(a.size())) return serial::sub_f32(a, b, out);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < a.size(); ++i) out[i] = double(a[i]) - double(b[i]);
}

void sub_f32_f64(std::span<const float> a, std::span<const double> b, std::span<double> out) {
    if (!use_parallel(a.size())) return serial::sub_f32_f64(a, b, out);
#pragma omp parallel for schedule(static)
    for (size_t i = 0; i < a.size(); ++i) out[i] = double(a[i]) - b[i];
}

void mat_vec_cols(const double* cols, size_t d, size_t n, const double* w, double* out) {
    if (!use_parallel(d * n)) return serial::mat_vec_cols(cols, d, n, w, out);
#pragma omp parallel for schedule(static)
    for (size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += w[i] * cols[i * d + k];
        out[k] = s;
    }
}

void gram(const double* cols, size_t d, size_t n, double* K) {
    if (!use_parallel(d * n)) return serial::gram(cols, d, n, K);
#ifdef _OPENMP
    const int nt = omp_get_max_threads();
    std::vector<double> partial(size_t(nt) * n * n, 0.0);
#pragma omp parallel num_threads(nt)
    {
        const int t = omp_get_thread_num();
        double* Kt = partial.data() + size_t(t) * n * n;
        const size_t chunk = (d + size_t(nt) - 1) / size_t(nt);
        const size_t lo = std::min(d, size_t(t) * chunk);
        const size_t hi = std::min(d, lo + chunk);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i; j < n; ++j) {
                double s = 0.0;
                const double* ci = cols + i * d;
                const double* cj = cols + j * d;
                for (size_t k = lo; k < hi; ++k) s += ci[k] * cj[k];
                Kt[i * n + j] = s;
            }
        }
    }
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < nt; ++t) s += partial[size_t(t) * n * n + i * n + j];
            K[i * n + j] = s;
            K[j * n + i] = s;
        }
    }
#else
    serial::gram(cols, d, n, K);
#endif
}

void complex_step(std::span<double> re, std::span<double> im, std::span<const double> g,
                  double beta_re, double beta_im, double gamma, std::span<double> disp) {
    if (!use_parallel(re.size())) return serial::complex_step(re, im, g, beta_re, beta_im, gamma, disp);
#pragma omp parallel for schedule(static)
    for (size_t k = 0; k < re.size(); ++k) {
        const double nr = beta_re * re[k] - beta_im * im[k] + g[k];
        const double ni = beta_im * re[k] + beta_re * im[k];
        re[k] = nr;
        im[k] = ni;
        disp[k] = gamma * nr;
    }
}

}  // namespace namex::kernels
