#include "namex/momentum_algebra.hpp"

#include <cmath>
#include <stdexcept>

#include "namex/kernels.hpp"

namespace namex {

ComplexCoeff polar(double modulus, double argument) {
    if (modulus <= 0.0) throw std::invalid_argument("polar: modulus must be positive");
    return {modulus * std::cos(argument), modulus * std::sin(argument)};
}

QuaternionCoeff hamilton(const QuaternionCoeff& a, const QuaternionCoeff& b) {
    return {
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    };
}

MomentumState MomentumState::complex_zeros(size_t d) {
    MomentumState s;
    s.kind = Kind::complex_kind;
    s.lanes[0].assign(d, 0.0);
    s.lanes[1].assign(d, 0.0);
    return s;
}

MomentumState MomentumState::quaternion_zeros(size_t d) {
    MomentumState s;
    s.kind = Kind::quaternion_kind;
    for (auto& lane : s.lanes) lane.assign(d, 0.0);
    return s;
}

namespace {

void check_step(const MomentumState& state, MomentumState::Kind kind, std::span<const double> g,
                double gamma, std::span<double> displacement) {
    if (state.kind != kind) throw std::invalid_argument("momentum step: wrong state kind");
    if (g.size() != state.dim() || displacement.size() != state.dim())
        throw std::invalid_argument("momentum step: dimension mismatch");
    if (!(gamma > 0.0)) throw std::invalid_argument("momentum step: gamma must be positive");
    for (double v : g)
        if (!std::isfinite(v)) throw std::invalid_argument("momentum step: non-finite direction");
}

}  // namespace

void momentum_step_complex(MomentumState& state, std::span<const double> g, ComplexCoeff beta,
                           double gamma, std::span<double> displacement) {
    check_step(state, MomentumState::Kind::complex_kind, g, gamma, displacement);
    kernels::complex_step(state.lanes[0], state.lanes[1], g, beta.re, beta.im, gamma, displacement);
}

void momentum_step_quaternion(MomentumState& state, std::span<const double> g, QuaternionCoeff beta,
                              double gamma, std::span<double> displacement) {
    check_step(state, MomentumState::Kind::quaternion_kind, g, gamma, displacement);
    auto& w = state.lanes[0];
    auto& x = state.lanes[1];
    auto& y = state.lanes[2];
    auto& z = state.lanes[3];
    for (size_t k = 0; k < w.size(); ++k) {
        const QuaternionCoeff mu{w[k], x[k], y[k], z[k]};
        QuaternionCoeff next = hamilton(beta, mu);
        next.w += g[k];
        w[k] = next.w;
        x[k] = next.x;
        y[k] = next.y;
        z[k] = next.z;
        displacement[k] = gamma * next.w;
    }
}

}  // namespace namex
