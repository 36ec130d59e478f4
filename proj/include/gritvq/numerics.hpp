#pragma once

#include "gritvq/mat.hpp"

namespace gritvq {

// C = A * B. The parallel version is the production kernel; matmul_serial is
// the plain triple loop kept as the reference the tests compare against.
Mat matmul(const Mat& a, const Mat& b);
Mat matmul_serial(const Mat& a, const Mat& b);

Mat transpose(const Mat& a);

double frobenius(const Mat& a);
double frobenius_diff(const Mat& a, const Mat& b);

// Largest singular value by power iteration on W^T W. Deterministic: the
// start vector comes from a fixed internal seed. Returns 0 for a zero matrix.
double spectral_norm(const Mat& w, int max_iters = 50, double tol = 1e-9);

double dot(const double* a, const double* b, long n);
double norm2(const double* a, long n);

}  // namespace gritvq
