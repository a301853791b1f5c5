// Stability of the momentum propagation dynamics. The layer-to-layer map on
// (Re mu, Im mu, E) is block-structured with identical 3x3 structure per
// parameter entry, so the whole spectrum is that of the reduced matrix
//   [ r   -u    -abar      ]
//   [ u    r     0         ]
//   [ g*r -g*u   1 - g*abar]
// with beta = r + u i, step size g and abar the sum of the bargaining
// weights. Convergence is certified either exactly (spectral radius of the
// characteristic cubic) or by the Fujiwara root bound, which gives a
// sufficient region in the (r, u) plane.
#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace namex {

struct StabilityPoint {
    double r = 0.0;          // Re(beta)
    double u = 0.0;          // Im(beta)
    double gamma = 1.0;      // propagation step size, > 0
    double alpha_sum = 1.0;  // sum of bargaining weights, > 0

    double gamma_hat() const { return gamma * alpha_sum; }
};

struct ReducedMatrix {
    std::array<double, 9> a{};  // row-major 3x3

    double at(int i, int j) const { return a[i * 3 + j]; }
};

// Monic characteristic cubic x^3 + a2 x^2 + a1 x + a0 = -det(A - xI).
struct CharPoly {
    double a2 = 0.0, a1 = 0.0, a0 = 0.0;
};

struct StabilityReport {
    double spectral_radius = 0.0;
    double fujiwara_bound = 0.0;
    bool in_sufficient_region = false;
    std::array<std::complex<double>, 3> eigenvalues{};
};

ReducedMatrix reduced_matrix(const StabilityPoint& p);

CharPoly char_poly(const ReducedMatrix& a);

// Roots of the monic cubic, Newton-polished to full double precision.
std::array<std::complex<double>, 3> cubic_roots(const CharPoly& p);

// 2 * max(|a2|, |a1|^(1/2), |a0/2|^(1/3)); every root modulus is below it.
double fujiwara_bound(const CharPoly& p);

StabilityReport spectral_radius(const ReducedMatrix& a);
StabilityReport fujiwara_region(const StabilityPoint& p);

// Full 3d x 3d block dynamics matrix (each reduced entry times I_d),
// row-major. Test and benchmark surface.
std::vector<double> assemble_block(const StabilityPoint& p, int64_t d);

struct SweepRow {
    double r, u, rho, fujiwara;
    bool in_region;
};

// (r, u) in [-1,1]^2 on a grid x grid lattice at fixed gamma and alpha_sum.
std::vector<SweepRow> sweep(int grid, double gamma, double alpha_sum);
// Header "r,u,rho,fujiwara,in_region", 9 significant digits per value.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct RateFit {
    double slope = 0.0;                    // least-squares slope of log distance vs step
    std::vector<double> distances;         // |s^(l) - s*| per step
};

// Iterates s <- A s + q from a seeded random start and fits the tail-half
// decay toward the fixed point (I - A)^(-1) q. Throws when A is not
// contractive. Steps floored at numerical convergence are excluded from the
// fit; slope is -inf when the iteration lands exactly on the fixed point.
RateFit empirical_rate(const ReducedMatrix& a, const std::array<double, 3>& q, int steps,
                       uint64_t seed);
RateFit empirical_rate(const StabilityPoint& p, const std::array<double, 3>& q, int steps,
                       uint64_t seed);

}  // namespace namex
