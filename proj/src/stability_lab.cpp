#include "namex/stability_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "namex/dense.hpp"
#include "namex/errors.hpp"
#include "namex/prng.hpp"

namespace namex {

ReducedMatrix reduced_matrix(const StabilityPoint& p) {
    if (!(p.gamma > 0.0) || !(p.alpha_sum > 0.0))
        throw std::invalid_argument("reduced_matrix: gamma and alpha_sum must be positive");
    ReducedMatrix a;
    a.a = {p.r,           -p.u,          -p.alpha_sum,
           p.u,           p.r,           0.0,
           p.gamma * p.r, -p.gamma * p.u, 1.0 - p.gamma_hat()};
    return a;
}

CharPoly char_poly(const ReducedMatrix& m) {
    const auto& a = m.a;
    const double tr = a[0] + a[4] + a[8];
    // sum of principal 2x2 minors
    const double minors = (a[0] * a[4] - a[1] * a[3]) + (a[0] * a[8] - a[2] * a[6]) +
                          (a[4] * a[8] - a[5] * a[7]);
    const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
                       a[2] * (a[3] * a[7] - a[4] * a[6]);
    return {-tr, minors, -det};
}

std::array<std::complex<double>, 3> cubic_roots(const CharPoly& cp) {
    using C = std::complex<double>;
    const double a2 = cp.a2, a1 = cp.a1, a0 = cp.a0;

    // depressed form t^3 + p t + q, x = t - a2/3
    const double shift = a2 / 3.0;
    const double p = a1 - a2 * a2 / 3.0;
    const double q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;

    std::array<C, 3> t;
    if (p == 0.0 && q == 0.0) {
        t = {C(0.0), C(0.0), C(0.0)};
    } else {
        const double disc = q * q / 4.0 + p * p * p / 27.0;
        if (disc > 0.0) {
            // one real root, one conjugate pair
            const double s = std::sqrt(disc);
            double u = std::cbrt(-q / 2.0 + s);
            double v;
            if (std::abs(u) > 1e-300) {
                v = -p / (3.0 * u);  // avoids cancellation in cbrt(-q/2 - s)
            } else {
                v = std::cbrt(-q / 2.0 - s);
            }
            const double real_root = u + v;
            const double re = -real_root / 2.0;
            const double im = std::sqrt(3.0) / 2.0 * (u - v);
            t = {C(real_root), C(re, im), C(re, -im)};
        } else {
            // three real roots
            const double m = 2.0 * std::sqrt(-p / 3.0);
            double arg = 3.0 * q / (p * m);
            arg = std::clamp(arg, -1.0, 1.0);
            const double theta = std::acos(arg) / 3.0;
            constexpr double two_thirds_pi = 2.0943951023931954923;
            t = {C(m * std::cos(theta)), C(m * std::cos(theta - two_thirds_pi)),
                 C(m * std::cos(theta - 2.0 * two_thirds_pi))};
        }
    }

    std::array<C, 3> roots;
    for (int i = 0; i < 3; ++i) {
        C z = t[i] - shift;
        // Newton polish on the original cubic
        for (int it = 0; it < 3; ++it) {
            const C f = ((z + a2) * z + a1) * z + a0;
            const C df = (3.0 * z + 2.0 * a2) * z + a1;
            if (std::abs(df) < 1e-300) break;
            const C dz = f / df;
            z -= dz;
            if (std::abs(dz) < 1e-16 * (1.0 + std::abs(z))) break;
        }
        roots[i] = z;
    }
    return roots;
}

double fujiwara_bound(const CharPoly& p) {
    const double t1 = std::abs(p.a2);
    const double t2 = std::sqrt(std::abs(p.a1));
    const double t3 = std::cbrt(std::abs(p.a0) / 2.0);
    return 2.0 * std::max({t1, t2, t3});
}

StabilityReport spectral_radius(const ReducedMatrix& a) {
    for (double v : a.a)
        if (!std::isfinite(v)) throw std::invalid_argument("spectral_radius: non-finite matrix");
    const CharPoly cp = char_poly(a);
    StabilityReport rep;
    rep.eigenvalues = cubic_roots(cp);
    for (const auto& ev : rep.eigenvalues)
        rep.spectral_radius = std::max(rep.spectral_radius, std::abs(ev));
    rep.fujiwara_bound = fujiwara_bound(cp);
    rep.in_sufficient_region = rep.fujiwara_bound < 1.0;
    return rep;
}

StabilityReport fujiwara_region(const StabilityPoint& p) {
    return spectral_radius(reduced_matrix(p));
}

std::vector<double> assemble_block(const StabilityPoint& p, int64_t d) {
    const ReducedMatrix a = reduced_matrix(p);
    const int64_t n = 3 * d;
    std::vector<double> block(size_t(n * n), 0.0);
    for (int bi = 0; bi < 3; ++bi)
        for (int bj = 0; bj < 3; ++bj)
            for (int64_t k = 0; k < d; ++k)
                block[size_t((bi * d + k) * n + (bj * d + k))] = a.at(bi, bj);
    return block;
}

std::vector<SweepRow> sweep(int grid, double gamma, double alpha_sum) {
    if (grid < 2) throw std::invalid_argument("sweep: grid must be at least 2");
    reduced_matrix({0.0, 0.0, gamma, alpha_sum});  // validate before the parallel region
    std::vector<SweepRow> rows(size_t(grid) * size_t(grid));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < grid; ++i) {
        const double r = -1.0 + 2.0 * double(i) / double(grid - 1);
        for (int j = 0; j < grid; ++j) {
            const double u = -1.0 + 2.0 * double(j) / double(grid - 1);
            const StabilityReport rep = fujiwara_region({r, u, gamma, alpha_sum});
            rows[size_t(i) * size_t(grid) + size_t(j)] =
                {r, u, rep.spectral_radius, rep.fujiwara_bound, rep.in_sufficient_region};
        }
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    std::string body = "r,u,rho,fujiwara,in_region\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%d\n", row.r, row.u, row.rho,
                      row.fujiwara, row.in_region ? 1 : 0);
        body += buf;
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << body;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + ": " + ec.message());
}

RateFit empirical_rate(const ReducedMatrix& a, const std::array<double, 3>& q, int steps,
                       uint64_t seed) {
    if (steps < 50) throw std::invalid_argument("empirical_rate: need at least 50 steps");
    const StabilityReport rep = spectral_radius(a);
    if (rep.spectral_radius >= 1.0 - 1e-9)
        throw std::invalid_argument("empirical_rate: matrix is not contractive");

    // fixed point (I - A) s* = q
    std::array<double, 3> star{};
    {
        std::vector<double> m(9);
        std::vector<double> b(q.begin(), q.end());
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m[size_t(i * 3 + j)] = (i == j ? 1.0 : 0.0) - a.at(i, j);
        if (!solve_linear(m, b, 3)) throw std::runtime_error("empirical_rate: singular I - A");
        std::copy(b.begin(), b.end(), star.begin());
    }

    Xoshiro256pp rng(seed);
    std::array<double, 3> s{};
    for (auto& v : s) v = rng.normal();

    RateFit fit;
    fit.distances.reserve(size_t(steps) + 1);
    const auto dist = [&] {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) acc += (s[size_t(i)] - star[size_t(i)]) * (s[size_t(i)] - star[size_t(i)]);
        return std::sqrt(acc);
    };
    fit.distances.push_back(dist());
    for (int l = 0; l < steps; ++l) {
        std::array<double, 3> next{};
        for (int i = 0; i < 3; ++i) {
            double acc = q[size_t(i)];
            for (int j = 0; j < 3; ++j) acc += a.at(i, j) * s[size_t(j)];
            next[size_t(i)] = acc;
        }
        s = next;
        fit.distances.push_back(dist());
    }

    // least squares on log distance over the tail half. Distances below the
    // rounding noise of the computed fixed point carry no rate information
    // and are skipped.
    double star_norm = 0.0;
    for (double v : star) star_norm += v * v;
    star_norm = std::sqrt(star_norm);
    const double floor_v = std::max(1e-280, 1e-13 * star_norm);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int64_t count = 0;
    for (int l = steps / 2; l <= steps; ++l) {
        const double dv = fit.distances[size_t(l)];
        if (dv <= floor_v) continue;
        const double x = double(l);
        const double y = std::log(dv);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++count;
    }
    if (count < 2) {
        fit.slope = -std::numeric_limits<double>::infinity();
        return fit;
    }
    const double denom = double(count) * sxx - sx * sx;
    fit.slope = (double(count) * sxy - sx * sy) / denom;
    return fit;
}

RateFit empirical_rate(const StabilityPoint& p, const std::array<double, 3>& q, int steps,
                       uint64_t seed) {
    return empirical_rate(reduced_matrix(p), q, steps, seed);
}

}  // namespace namex
