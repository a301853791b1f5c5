#pragma once

#include <cstdint>
#include <vector>

namespace namex {

// d x N matrix whose columns are the per-expert domain vectors
// tau_i = E_i - E_m, stored column-major.
struct DomainMatrix {
    int64_t d = 0;
    int64_t n = 0;
    std::vector<double> cols;  // column i at cols[i*d .. i*d+d)

    double* col(int64_t i) { return cols.data() + i * d; }
    const double* col(int64_t i) const { return cols.data() + i * d; }
};

// N x N symmetric matrix of pairwise domain-vector dot products.
struct GramMatrix {
    int64_t n = 0;
    std::vector<double> k;  // row-major

    double at(int64_t i, int64_t j) const { return k[i * n + j]; }
};

// In-place Gaussian elimination with partial pivoting; returns false when a
// pivot underflows (matrix numerically singular). a is row-major n x n and is
// destroyed; b becomes the solution.
bool solve_linear(std::vector<double>& a, std::vector<double>& b, int64_t n);

}  // namespace namex
