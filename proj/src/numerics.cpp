#include "gritvq/numerics.hpp"

#include <cmath>

namespace gritvq {

static void check_mul_shapes(const Mat& a, const Mat& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows) + ")");
}

Mat matmul_serial(const Mat& a, const Mat& b) {
    check_mul_shapes(a, b);
    Mat c(a.rows, b.cols);
    for (long i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (long k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (long j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Mat matmul(const Mat& a, const Mat& b) {
    check_mul_shapes(a, b);
    Mat c(a.rows, b.cols);
    // Rows are independent, so the result is identical for any thread count.
#pragma omp parallel for schedule(static)
    for (long i = 0; i < a.rows; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (long k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (long j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (long i = 0; i < a.rows; ++i)
        for (long j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

double frobenius(const Mat& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

double frobenius_diff(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) throw ShapeError("frobenius_diff: shapes disagree");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double dot(const double* a, const double* b, long n) {
    double s = 0.0;
    for (long i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double norm2(const double* a, long n) {
    return std::sqrt(dot(a, a, n));
}

double spectral_norm(const Mat& w, int max_iters, double tol) {
    if (w.rows == 0 || w.cols == 0) return 0.0;
    double max_abs = 0.0;
    for (double v : w.data) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) return 0.0;

    Rng rng(0x5D3C0DE5ull);
    std::vector<double> v(static_cast<size_t>(w.cols));
    for (auto& x : v) x = rng.normal();
    double nv = norm2(v.data(), w.cols);
    for (auto& x : v) x /= nv;

    std::vector<double> u(static_cast<size_t>(w.rows));
    double sigma = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        for (long i = 0; i < w.rows; ++i) u[static_cast<size_t>(i)] = dot(w.row(i), v.data(), w.cols);
        const double nu = norm2(u.data(), w.rows);
        if (nu == 0.0) return 0.0;
        for (auto& x : u) x /= nu;
        // v <- W^T u
        std::fill(v.begin(), v.end(), 0.0);
        for (long i = 0; i < w.rows; ++i) {
            const double ui = u[static_cast<size_t>(i)];
            const double* wi = w.row(i);
            for (long j = 0; j < w.cols; ++j) v[static_cast<size_t>(j)] += ui * wi[j];
        }
        const double next = norm2(v.data(), w.cols);
        if (next == 0.0) return 0.0;
        for (auto& x : v) x /= next;
        if (std::abs(next - sigma) <= tol * std::max(1.0, next)) return next;
        sigma = next;
    }
    return sigma;
}

}  // namespace gritvq
