#include "namex/dense.hpp"

#include <cmath>

namespace namex {

bool solve_linear(std::vector<double>& a, std::vector<double>& b, int64_t n) {
    for (int64_t col = 0; col < n; ++col) {
        int64_t pivot = col;
        double best = std::abs(a[col * n + col]);
        for (int64_t r = col + 1; r < n; ++r) {
            const double v = std::abs(a[r * n + col]);
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best < 1e-300) return false;
        if (pivot != col) {
            for (int64_t c = col; c < n; ++c) std::swap(a[pivot * n + c], a[col * n + c]);
            std::swap(b[pivot], b[col]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (int64_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] * inv;
            if (f == 0.0) continue;
            for (int64_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    for (int64_t r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int64_t c = r + 1; c < n; ++c) s -= a[r * n + c] * b[c];
        b[r] = s / a[r * n + r];
    }
    return true;
}

}  // namespace namex
