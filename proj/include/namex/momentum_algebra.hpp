#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace namex {

struct ComplexCoeff {
    double re = 0.0;
    double im = 0.0;
};

struct QuaternionCoeff {
    double w = 0.0, x = 0.0, y = 0.0, z = 0.0;
};

ComplexCoeff polar(double modulus, double argument);

QuaternionCoeff hamilton(const QuaternionCoeff& a, const QuaternionCoeff& b);

// Per-entry momentum accumulator. Complex states use lanes 0/1 (re/im),
// quaternion states all four (w/x/y/z). Fresh states are all-zero.
struct MomentumState {
    enum class Kind { complex_kind, quaternion_kind };

    Kind kind = Kind::complex_kind;
    std::array<std::vector<double>, 4> lanes;

    static MomentumState complex_zeros(size_t d);
    static MomentumState quaternion_zeros(size_t d);
    size_t dim() const { return lanes[0].size(); }
};

// mu <- beta*mu + g; displacement = gamma * Re(mu'). gamma must be positive.
void momentum_step_complex(MomentumState& state, std::span<const double> g, ComplexCoeff beta,
                           double gamma, std::span<double> displacement);

// mu <- beta*mu (left Hamilton product) with g injected into the scalar lane;
// displacement = gamma * w-lane of mu'. Reduces exactly to the complex step
// when x = y = z = 0.
void momentum_step_quaternion(MomentumState& state, std::span<const double> g, QuaternionCoeff beta,
                              double gamma, std::span<double> displacement);

}  // namespace namex
