#pragma once

#include <span>
#include <string>
#include <vector>

#include "gritvq/mat.hpp"

namespace gritvq {

struct CodebookState {
    Mat E;       // K x d, codewords as rows
    long K = 0;
    long d = 0;
};

// Validates K >= 2, d >= 1 and that no two rows coincide.
CodebookState make_codebook(Mat E);

// Gaussian init: i.i.d. standard-normal rows, each normalized to unit length.
CodebookState init_codebook(long K, long d, Rng& rng);
// K-means init: k-means++ seeding plus Lloyd iterations over the warmup set.
CodebookState init_codebook(const Mat& warmup, long K, int iters, Rng& rng);

Mat kmeans_pp_seed(const Mat& points, long K, Rng& rng);
// Lloyd iterations; empty clusters are re-seeded from the farthest point.
// When sse_trace is given it receives the post-iteration objective values.
Mat lloyd(const Mat& points, Mat centers, int iters, Rng& rng,
          std::vector<double>* sse_trace = nullptr);
double kmeans_sse(const Mat& points, const Mat& centers);

enum class TransformKind { Identity, LinearLowRank, AttentionTopK, LowRankNormalized };

const char* kind_name(TransformKind k);
TransformKind kind_from_name(const std::string& name);

struct TransformSpec {
    TransformKind kind = TransformKind::Identity;
    Mat A, B;        // K x r mixer factors, M = A Bᵀ
    Mat W;           // d x d feature transform
    long rank = 32;
    Mat U1, V1;      // d x ds attention scoring factors
    long k = 16;     // attention fan-in
    double temp = 1.0;
    double tau_w = 1.75;
    bool row_normalize = false;
};

void validate_transform_spec(const TransformSpec& spec, long K, long d);

// Intermediates saved by apply_transform so the backward pass can reuse them.
struct TransformWork {
    Mat T1;  // Bᵀ E
    Mat T2;  // A T1, before any row scaling
    std::vector<double> lowrank_scale;  // LowRankNormalized 1/sqrt(|T2_i|^2+temp^2)
    Mat T3;  // matrix that multiplies W (T2, scaled T2, or mixed codes)
    Mat P, Q;                 // attention E U1, E V1
    std::vector<long> topk;   // attention winners, K*k row-major
    std::vector<double> attn; // attention softmax weights, K*k row-major
    Mat pre_norm;                  // rows before the final row normalization
    std::vector<double> row_norm;  // final row norms (row_normalize only)
};

// frozen_topk reuses a previously selected attention neighbor set instead of
// recomputing it, which keeps backward passes consistent with the cache epoch.
Mat apply_transform(const TransformSpec& spec, const Mat& E, TransformWork* work = nullptr,
                    const std::vector<long>* frozen_topk = nullptr);

// Dense K x K mixer, test oracle only; refuses K > 512.
Mat materialize_mixer(const TransformSpec& spec, const Mat& E);

Mat spectral_clip(const Mat& W, double tau_w);

struct TransformedCache {
    Mat Eprime;
    std::vector<double> sq_norms;
    long step_stamp = 0;
    Mat prev_Eprime;
    double drift = 0.0;  // Frobenius distance to the previous cache
    TransformWork work;  // forward intermediates from the refresh
};

TransformedCache refresh_cache(const CodebookState& state, const TransformSpec& spec,
                               long step, const TransformedCache* old = nullptr);

struct Assignment {
    long index = -1;
    std::vector<double> zhat;
    double gap = 0.0;
    std::vector<double> direction;  // unit (zhat - z)/gap, zero when gap = 0
    std::vector<double> residual;   // z - zhat
};

Assignment nn_query(const TransformedCache& cache, std::span<const double> z);
std::vector<Assignment> batch_nn(const TransformedCache& cache, const Mat& Z);
// Serial reference for the parallel kernel above.
std::vector<Assignment> batch_nn_serial(const TransformedCache& cache, const Mat& Z);

// A = B = orthonormal basis whose leading column is the constant vector, so
// M = A Bᵀ starts as a rank-r projection with unit row sums.
void init_lowrank_ortho(TransformSpec& spec, long K, long r, Rng& rng);
// A = B ~ N(0, 1/r) entries; M begins near a scaled identity in expectation.
void init_lowrank_gaussian(TransformSpec& spec, long K, long r, Rng& rng);

}  // namespace gritvq
