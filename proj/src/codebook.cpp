#include "gritvq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gritvq/json_io.hpp"
#include "gritvq/numerics.hpp"
#include "gritvq/serialize.hpp"

namespace gritvq {

namespace {

double row_dist_sq(const Mat& a, long i, const Mat& b, long j) {
    double s = 0.0;
    for (long c = 0; c < a.cols; ++c) {
        const double diff = a(i, c) - b(j, c);
        s += diff * diff;
    }
    return s;
}

void normalize_rows(Mat& m, std::vector<double>* norms = nullptr) {
    if (norms) norms->assign(static_cast<size_t>(m.rows), 1.0);
    for (long i = 0; i < m.rows; ++i) {
        const double n = norm2(m.row(i), m.cols);
        if (n <= 0.0) continue;  // leave an exactly-zero row alone
        if (norms) (*norms)[static_cast<size_t>(i)] = n;
        for (long j = 0; j < m.cols; ++j) m(i, j) /= n;
    }
}

}  // namespace

CodebookState make_codebook(Mat E) {
    if (E.rows < 2 || E.cols < 1) throw DomainError("codebook needs K >= 2 and d >= 1");
    for (long i = 0; i < E.rows; ++i)
        for (long j = i + 1; j < E.rows; ++j)
            if (row_dist_sq(E, i, E, j) <= 1e-18)
                throw DomainError("codebook has duplicate rows " + std::to_string(i) + " and " +
                                  std::to_string(j));
    CodebookState state;
    state.K = E.rows;
    state.d = E.cols;
    state.E = std::move(E);
    return state;
}

CodebookState init_codebook(long K, long d, Rng& rng) {
    if (K < 2) throw DomainError("codebook needs K >= 2");
    Mat E = random_normal(rng, K, d);
    normalize_rows(E);
    return make_codebook(std::move(E));
}

Mat kmeans_pp_seed(const Mat& points, long K, Rng& rng) {
    const long n = points.rows;
    if (n < K) throw DomainError("k-means needs at least K warmup points");
    Mat centers(K, points.cols);
    std::vector<double> dist_sq(static_cast<size_t>(n), std::numeric_limits<double>::max());
    long first = rng.below(n);
    for (long j = 0; j < points.cols; ++j) centers(0, j) = points(first, j);
    for (long c = 1; c < K; ++c) {
        double total = 0.0;
        for (long i = 0; i < n; ++i) {
            dist_sq[static_cast<size_t>(i)] =
                std::min(dist_sq[static_cast<size_t>(i)], row_dist_sq(points, i, centers, c - 1));
            total += dist_sq[static_cast<size_t>(i)];
        }
        long pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total, acc = 0.0;
            for (long i = 0; i < n; ++i) {
                acc += dist_sq[static_cast<size_t>(i)];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        for (long j = 0; j < points.cols; ++j) centers(c, j) = points(pick, j);
    }
    return centers;
}

double kmeans_sse(const Mat& points, const Mat& centers) {
    double sse = 0.0;
    for (long i = 0; i < points.rows; ++i) {
        double best = std::numeric_limits<double>::max();
        for (long c = 0; c < centers.rows; ++c)
            best = std::min(best, row_dist_sq(points, i, centers, c));
        sse += best;
    }
    return sse;
}

Mat lloyd(const Mat& points, Mat centers, int iters, Rng& rng, std::vector<double>* sse_trace) {
    const long n = points.rows, K = centers.rows, d = points.cols;
    std::vector<long> assign(static_cast<size_t>(n));
    std::vector<long> counts(static_cast<size_t>(K));
    for (int it = 0; it < iters; ++it) {
        for (long i = 0; i < n; ++i) {
            long best = 0;
            double best_d = row_dist_sq(points, i, centers, 0);
            for (long c = 1; c < K; ++c) {
                const double dd = row_dist_sq(points, i, centers, c);
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            assign[static_cast<size_t>(i)] = best;
        }
        Mat next(K, d);
        std::fill(counts.begin(), counts.end(), 0);
        for (long i = 0; i < n; ++i) {
            const long c = assign[static_cast<size_t>(i)];
            ++counts[static_cast<size_t>(c)];
            for (long j = 0; j < d; ++j) next(c, j) += points(i, j);
        }
        for (long c = 0; c < K; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                for (long j = 0; j < d; ++j) next(c, j) /= static_cast<double>(counts[static_cast<size_t>(c)]);
            } else {
                // Re-seed an empty cluster from the point farthest from its center.
                long far = 0;
                double far_d = -1.0;
                for (long i = 0; i < n; ++i) {
                    const double dd = row_dist_sq(points, i, centers, assign[static_cast<size_t>(i)]);
                    if (dd > far_d) {
                        far_d = dd;
                        far = i;
                    }
                }
                for (long j = 0; j < d; ++j) next(c, j) = points(far, j);
            }
        }
        centers = std::move(next);
        if (sse_trace) sse_trace->push_back(kmeans_sse(points, centers));
    }
    (void)rng;
    return centers;
}

CodebookState init_codebook(const Mat& warmup, long K, int iters, Rng& rng) {
    if (warmup.rows < K) throw DomainError("k-means init needs at least K warmup points");
    Mat centers = kmeans_pp_seed(warmup, K, rng);
    centers = lloyd(warmup, std::move(centers), iters, rng);
    // Coincident centers can survive degenerate warmup sets; nudge them apart
    // so the no-duplicate invariant holds.
    for (long i = 0; i < K; ++i)
        for (long j = i + 1; j < K; ++j)
            if (row_dist_sq(centers, i, centers, j) <= 1e-18)
                for (long c = 0; c < centers.cols; ++c) centers(j, c) += 1e-6 * rng.normal();
    return make_codebook(std::move(centers));
}

const char* kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::Identity: return "identity";
        case TransformKind::LinearLowRank: return "linear_lowrank";
        case TransformKind::AttentionTopK: return "attention_topk";
        case TransformKind::LowRankNormalized: return "lowrank_normalized";
    }
    throw DomainError("unknown transform kind id");
}

TransformKind kind_from_name(const std::string& name) {
    if (name == "identity") return TransformKind::Identity;
    if (name == "linear_lowrank") return TransformKind::LinearLowRank;
    if (name == "attention_topk") return TransformKind::AttentionTopK;
    if (name == "lowrank_normalized") return TransformKind::LowRankNormalized;
    throw DomainError("unknown transform kind '" + name + "'");
}

void validate_transform_spec(const TransformSpec& spec, long K, long d) {
    if (!(spec.tau_w > 0.0)) throw DomainError("tau_w must be > 0");
    switch (spec.kind) {
        case TransformKind::Identity:
            return;
        case TransformKind::LinearLowRank:
        case TransformKind::LowRankNormalized: {
            if (spec.rank < 1) throw DomainError("rank must be >= 1");
            if (spec.kind == TransformKind::LinearLowRank && spec.rank > std::min(K, d))
                throw DomainError("rank must not exceed min(K, d)");
            if (spec.A.rows != K || spec.A.cols != spec.rank || spec.B.rows != K ||
                spec.B.cols != spec.rank)
                throw ShapeError("mixer factors must be K x rank");
            if (spec.W.rows != d || spec.W.cols != d) throw ShapeError("W must be d x d");
            if (spec.kind == TransformKind::LowRankNormalized && !(spec.temp > 0.0))
                throw DomainError("temp must be > 0");
            return;
        }
        case TransformKind::AttentionTopK: {
            if (spec.k < 1 || spec.k > K) throw DomainError("attention k must lie in [1, K]");
            if (!(spec.temp > 0.0)) throw DomainError("temp must be > 0");
            if (spec.U1.rows != d || spec.V1.rows != d || spec.U1.cols != spec.V1.cols ||
                spec.U1.cols < 1)
                throw ShapeError("U1 and V1 must be d x ds with matching ds");
            if (spec.W.rows != d || spec.W.cols != d) throw ShapeError("W must be d x d");
            return;
        }
    }
    throw DomainError("unknown transform kind id");
}

Mat apply_transform(const TransformSpec& spec, const Mat& E, TransformWork* work,
                    const std::vector<long>* frozen_topk) {
    const long K = E.rows, d = E.cols;
    validate_transform_spec(spec, K, d);
    Mat out;
    switch (spec.kind) {
        case TransformKind::Identity:
            out = E;
            break;
        case TransformKind::LinearLowRank: {
            Mat t1 = matmul(transpose(spec.B), E);  // r x d
            Mat t2 = matmul(spec.A, t1);            // K x d
            out = matmul(t2, spec.W);
            if (work) {
                work->T1 = std::move(t1);
                work->T3 = t2;  // the matrix that multiplies W
                work->T2 = std::move(t2);
            }
            break;
        }
        case TransformKind::LowRankNormalized: {
            Mat t1 = matmul(transpose(spec.B), E);
            Mat t2 = matmul(spec.A, t1);
            std::vector<double> scale(static_cast<size_t>(K));
            Mat t3 = t2;
            for (long i = 0; i < K; ++i) {
                const double nsq = dot(t2.row(i), t2.row(i), d);
                scale[static_cast<size_t>(i)] = 1.0 / std::sqrt(nsq + spec.temp * spec.temp);
                for (long j = 0; j < d; ++j) t3(i, j) *= scale[static_cast<size_t>(i)];
            }
            out = matmul(t3, spec.W);
            if (work) {
                work->T1 = std::move(t1);
                work->T2 = std::move(t2);
                work->lowrank_scale = std::move(scale);
                work->T3 = std::move(t3);
            }
            break;
        }
        case TransformKind::AttentionTopK: {
            const long kk = spec.k;
            Mat p = matmul(E, spec.U1);  // K x ds
            Mat q = matmul(E, spec.V1);
            const long ds = p.cols;
            std::vector<long> topk(static_cast<size_t>(K * kk));
            std::vector<double> attn(static_cast<size_t>(K * kk));
            Mat t3(K, d);
            if (frozen_topk) {
                if (static_cast<long>(frozen_topk->size()) != K * kk)
                    throw ShapeError("frozen top-k set has the wrong size");
                topk = *frozen_topk;
            }
#pragma omp parallel for schedule(static)
            for (long i = 0; i < K; ++i) {
                std::vector<double> scores(static_cast<size_t>(K));
                for (long j = 0; j < K; ++j)
                    scores[static_cast<size_t>(j)] = dot(p.row(i), q.row(j), ds) / spec.temp;
                long* winners = &topk[static_cast<size_t>(i * kk)];
                if (!frozen_topk) {
                    std::vector<long> order(static_cast<size_t>(K));
                    for (long j = 0; j < K; ++j) order[static_cast<size_t>(j)] = j;
                    std::partial_sort(order.begin(), order.begin() + kk, order.end(),
                                      [&](long a, long b) {
                                          if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
                                              return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
                                          return a < b;
                                      });
                    std::copy(order.begin(), order.begin() + kk, winners);
                    std::sort(winners, winners + kk);
                }
                double max_s = -std::numeric_limits<double>::max();
                for (long t = 0; t < kk; ++t)
                    max_s = std::max(max_s, scores[static_cast<size_t>(winners[t])]);
                double denom = 0.0;
                double* wrow = &attn[static_cast<size_t>(i * kk)];
                for (long t = 0; t < kk; ++t) {
                    wrow[t] = std::exp(scores[static_cast<size_t>(winners[t])] - max_s);
                    denom += wrow[t];
                }
                for (long t = 0; t < kk; ++t) wrow[t] /= denom;
                for (long t = 0; t < kk; ++t)
                    for (long j = 0; j < d; ++j) t3(i, j) += wrow[t] * E(winners[t], j);
            }
            out = matmul(t3, spec.W);
            if (work) {
                work->P = std::move(p);
                work->Q = std::move(q);
                work->topk = std::move(topk);
                work->attn = std::move(attn);
                work->T3 = std::move(t3);
            }
            break;
        }
    }
    if (spec.row_normalize) {
        if (work) work->pre_norm = out;
        normalize_rows(out, work ? &work->row_norm : nullptr);
    }
    return out;
}

Mat materialize_mixer(const TransformSpec& spec, const Mat& E) {
    const long K = E.rows;
    if (K > 512) throw DomainError("dense mixer oracle is limited to K <= 512");
    switch (spec.kind) {
        case TransformKind::Identity:
            return Mat::identity(K);
        case TransformKind::LinearLowRank:
            return matmul(spec.A, transpose(spec.B));
        case TransformKind::LowRankNormalized: {
            TransformWork work;
            apply_transform(spec, E, &work);
            Mat m = matmul(spec.A, transpose(spec.B));
            for (long i = 0; i < K; ++i)
                for (long j = 0; j < K; ++j) m(i, j) *= work.lowrank_scale[static_cast<size_t>(i)];
            return m;
        }
        case TransformKind::AttentionTopK: {
            TransformWork work;
            apply_transform(spec, E, &work);
            Mat m(K, K);
            for (long i = 0; i < K; ++i)
                for (long t = 0; t < spec.k; ++t)
                    m(i, work.topk[static_cast<size_t>(i * spec.k + t)]) =
                        work.attn[static_cast<size_t>(i * spec.k + t)];
            return m;
        }
    }
    throw DomainError("unknown transform kind id");
}

Mat spectral_clip(const Mat& W, double tau_w) {
    if (!(tau_w > 0.0)) throw DomainError("tau_w must be > 0");
    Mat out = W;
    for (int attempt = 0; attempt < 5; ++attempt) {
        const double sigma = spectral_norm(out, 200, 1e-13);
        if (sigma <= tau_w * (1.0 + 1e-12)) break;
        const double scale = tau_w / sigma;
        for (auto& x : out.data) x *= scale;
    }
    return out;
}

TransformedCache refresh_cache(const CodebookState& state, const TransformSpec& spec,
                               long step, const TransformedCache* old) {
    TransformedCache cache;
    cache.Eprime = apply_transform(spec, state.E, &cache.work);
    cache.sq_norms.resize(static_cast<size_t>(cache.Eprime.rows));
    for (long i = 0; i < cache.Eprime.rows; ++i)
        cache.sq_norms[static_cast<size_t>(i)] = dot(cache.Eprime.row(i), cache.Eprime.row(i),
                                                     cache.Eprime.cols);
    cache.step_stamp = step;
    cache.prev_Eprime = old ? old->Eprime : cache.Eprime;
    cache.drift = frobenius_diff(cache.Eprime, cache.prev_Eprime);
    return cache;
}

namespace {

Assignment assign_row(const TransformedCache& cache, const double* z, long d) {
    const Mat& ep = cache.Eprime;
    long best = 0;
    double best_score = std::numeric_limits<double>::max();
    for (long i = 0; i < ep.rows; ++i) {
        const double score = cache.sq_norms[static_cast<size_t>(i)] - 2.0 * dot(z, ep.row(i), d);
        if (score < best_score) {  // strict: ties keep the smallest index
            best_score = score;
            best = i;
        }
    }
    Assignment a;
    a.index = best;
    a.zhat.assign(ep.row(best), ep.row(best) + d);
    a.residual.resize(static_cast<size_t>(d));
    a.direction.assign(static_cast<size_t>(d), 0.0);
    double gap_sq = 0.0;
    for (long j = 0; j < d; ++j) {
        const double diff = a.zhat[static_cast<size_t>(j)] - z[j];
        a.residual[static_cast<size_t>(j)] = -diff;
        gap_sq += diff * diff;
    }
    a.gap = std::sqrt(gap_sq);
    if (a.gap > 0.0)
        for (long j = 0; j < d; ++j)
            a.direction[static_cast<size_t>(j)] = (a.zhat[static_cast<size_t>(j)] - z[j]) / a.gap;
    return a;
}

}  // namespace

Assignment nn_query(const TransformedCache& cache, std::span<const double> z) {
    if (static_cast<long>(z.size()) != cache.Eprime.cols)
        throw ShapeError("nn_query: query dimension does not match the cache");
    return assign_row(cache, z.data(), cache.Eprime.cols);
}

std::vector<Assignment> batch_nn(const TransformedCache& cache, const Mat& Z) {
    if (Z.cols != cache.Eprime.cols)
        throw ShapeError("batch_nn: batch dimension does not match the cache");
    std::vector<Assignment> out(static_cast<size_t>(Z.rows));
#pragma omp parallel for schedule(static)
    for (long i = 0; i < Z.rows; ++i)
        out[static_cast<size_t>(i)] = assign_row(cache, Z.row(i), Z.cols);
    return out;
}

std::vector<Assignment> batch_nn_serial(const TransformedCache& cache, const Mat& Z) {
    if (Z.cols != cache.Eprime.cols)
        throw ShapeError("batch_nn: batch dimension does not match the cache");
    std::vector<Assignment> out(static_cast<size_t>(Z.rows));
    for (long i = 0; i < Z.rows; ++i)
        out[static_cast<size_t>(i)] = assign_row(cache, Z.row(i), Z.cols);
    return out;
}

void init_lowrank_ortho(TransformSpec& spec, long K, long r, Rng& rng) {
    Mat q(K, r);
    for (long i = 0; i < K; ++i) q(i, 0) = 1.0 / std::sqrt(static_cast<double>(K));
    for (long j = 1; j < r; ++j) {
        std::vector<double> v(static_cast<size_t>(K));
        for (auto& x : v) x = rng.normal();
        for (long prev = 0; prev < j; ++prev) {
            double proj = 0.0;
            for (long i = 0; i < K; ++i) proj += q(i, prev) * v[static_cast<size_t>(i)];
            for (long i = 0; i < K; ++i) v[static_cast<size_t>(i)] -= proj * q(i, prev);
        }
        const double n = norm2(v.data(), K);
        if (n <= 1e-12) throw DomainError("orthonormal init degenerated; need r << K");
        for (long i = 0; i < K; ++i) q(i, j) = v[static_cast<size_t>(i)] / n;
    }
    spec.rank = r;
    spec.A = q;
    spec.B = std::move(q);
}

void init_lowrank_gaussian(TransformSpec& spec, long K, long r, Rng& rng) {
    spec.rank = r;
    spec.A = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
    spec.B = spec.A;
}

namespace {

void check_envelope_fields(const nlohmann::json& j, const char* what) {
    for (const auto& [key, _] : j.items())
        if (key != std::string("version") && key != "kind" && key != "params" && key != "tensors")
            throw DomainError(std::string(what) + ": unknown field '" + key + "'");
}

}  // namespace

nlohmann::json codebook_to_json(const CodebookState& state) {
    nlohmann::json j = envelope("codebook");
    j["tensors"]["E"] = mat_to_json(state.E);
    return j;
}

CodebookState codebook_from_json(const nlohmann::json& j) {
    check_envelope(j, "codebook");
    check_envelope_fields(j, "codebook");
    if (!j.contains("tensors") || !j.at("tensors").contains("E"))
        throw DomainError("codebook: missing tensor E");
    return make_codebook(mat_from_json(j.at("tensors").at("E")));
}

nlohmann::json transform_spec_to_json(const TransformSpec& spec) {
    nlohmann::json j = envelope("transform");
    nlohmann::json params;
    params["transform"] = kind_name(spec.kind);
    params["tau_w"] = spec.tau_w;
    params["row_normalize"] = spec.row_normalize;
    switch (spec.kind) {
        case TransformKind::Identity:
            break;
        case TransformKind::LinearLowRank:
        case TransformKind::LowRankNormalized:
            params["rank"] = spec.rank;
            if (spec.kind == TransformKind::LowRankNormalized) params["temp"] = spec.temp;
            j["tensors"]["A"] = mat_to_json(spec.A);
            j["tensors"]["B"] = mat_to_json(spec.B);
            j["tensors"]["W"] = mat_to_json(spec.W);
            break;
        case TransformKind::AttentionTopK:
            params["k"] = spec.k;
            params["temp"] = spec.temp;
            j["tensors"]["U1"] = mat_to_json(spec.U1);
            j["tensors"]["V1"] = mat_to_json(spec.V1);
            j["tensors"]["W"] = mat_to_json(spec.W);
            break;
    }
    j["params"] = params;
    return j;
}

TransformSpec transform_spec_from_json(const nlohmann::json& j) {
    check_envelope(j, "transform");
    check_envelope_fields(j, "transform");
    const nlohmann::json params = j.value("params", nlohmann::json::object());
    if (!params.contains("transform")) throw DomainError("transform: missing kind");
    TransformSpec spec;
    spec.kind = kind_from_name(params.at("transform").get<std::string>());
    for (const auto& [key, val] : params.items()) {
        if (key == "transform") continue;
        if (key == "tau_w") spec.tau_w = val.get<double>();
        else if (key == "row_normalize") spec.row_normalize = val.get<bool>();
        else if (key == "rank") spec.rank = val.get<long>();
        else if (key == "temp") spec.temp = val.get<double>();
        else if (key == "k") spec.k = val.get<long>();
        else throw DomainError("transform: unknown parameter '" + key + "'");
    }
    const nlohmann::json tensors = j.value("tensors", nlohmann::json::object());
    for (const auto& [key, val] : tensors.items()) {
        if (key == "A") spec.A = mat_from_json(val);
        else if (key == "B") spec.B = mat_from_json(val);
        else if (key == "W") spec.W = mat_from_json(val);
        else if (key == "U1") spec.U1 = mat_from_json(val);
        else if (key == "V1") spec.V1 = mat_from_json(val);
        else throw DomainError("transform: unknown tensor '" + key + "'");
    }
    return spec;
}

}  // namespace gritvq
