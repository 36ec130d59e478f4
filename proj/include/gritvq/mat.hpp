#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gritvq/common.hpp"

namespace gritvq {

// Dense row-major matrix of doubles. All entries are expected to stay finite;
// loaders and train_step enforce this at the boundaries where it matters.
struct Mat {
    long rows = 0;
    long cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(long r, long c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r * c), fill) {
        if (r < 0 || c < 0) throw ShapeError("Mat: negative dimension");
    }

    double& operator()(long i, long j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(long i, long j) const { return data[static_cast<size_t>(i) * cols + j]; }
    double* row(long i) { return data.data() + static_cast<size_t>(i) * cols; }
    const double* row(long i) const { return data.data() + static_cast<size_t>(i) * cols; }
    size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    static Mat identity(long n) {
        Mat m(n, n);
        for (long i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

// Seeded counter-free PRNG: splitmix64-expanded xoshiro256**. Self-contained
// so that equal seeds give identical streams on every platform/toolchain,
// which the determinism guarantees (byte-identical metrics) rely on.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9E3779B97F4A7C15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
            w = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; one value per call keeps replay trivial.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n) by rejection (unbiased).
    uint64_t below(uint64_t n) {
        if (n == 0) throw DomainError("Rng::below: n must be positive");
        const uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

  private:
    uint64_t s_[4];
};

inline Mat random_normal(Rng& rng, long rows, long cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (auto& v : m.data) v = scale * rng.normal();
    return m;
}

}  // namespace gritvq
