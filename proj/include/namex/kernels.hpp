// Data-parallel primitives behind the merge and analysis paths. Every kernel
// has an OpenMP build and a serial reference twin under kernels::serial; the
// unit tests compare the two and tools/bench_kernels times them.
//
// Parallel reductions accumulate per-thread partials over contiguous chunks
// and combine them in thread order, so results are reproducible for a fixed
// thread count.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace namex::kernels {

namespace serial {

double dot(std::span<const double> a, std::span<const double> b);
double dot_f32(std::span<const float> a, std::span<const float> b);
double norm2(std::span<const double> a);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
// out = a - b, widened to double
void sub_f32(std::span<const float> a, std::span<const float> b, std::span<double> out);
// out = a - b with an f32 minuend and a double subtrahend
void sub_f32_f64(std::span<const float> a, std::span<const double> b, std::span<double> out);
// out = cols * w for a column-major d x n matrix
void mat_vec_cols(const double* cols, size_t d, size_t n, const double* w, double* out);
// K[i*n+j] = col_i . col_j for a column-major d x n matrix
void gram(const double* cols, size_t d, size_t n, double* K);
// complex multiply-accumulate per entry: mu <- beta*mu + g, disp = gamma*Re(mu)
void complex_step(std::span<double> re, std::span<double> im, std::span<const double> g,
                  double beta_re, double beta_im, double gamma, std::span<double> disp);

}  // namespace serial

double dot(std::span<const double> a, std::span<const double> b);
double dot_f32(std::span<const float> a, std::span<const float> b);
double norm2(std::span<const double> a);
void axpy(double a, std::span<const double> x, std::span<double> y);
void sub_f32(std::span<const float> a, std::span<const float> b, std::span<double> out);
void sub_f32_f64(std::span<const float> a, std::span<const double> b, std::span<double> out);
void mat_vec_cols(const double* cols, size_t d, size_t n, const double* w, double* out);
void gram(const double* cols, size_t d, size_t n, double* K);
void complex_step(std::span<double> re, std::span<double> im, std::span<const double> g,
                  double beta_re, double beta_im, double gamma, std::span<double> disp);

int max_threads();

}  // namespace namex::kernels
