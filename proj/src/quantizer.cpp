#include "gritvq/quantizer.hpp"

#include <cmath>

#include "gritvq/numerics.hpp"

namespace gritvq {

const char* form_name(SurrogateForm f) {
    return f == SurrogateForm::UnitDirection ? "unit_direction" : "ratio";
}

SurrogateForm form_from_name(const std::string& name) {
    if (name == "unit_direction") return SurrogateForm::UnitDirection;
    if (name == "ratio") return SurrogateForm::RatioForm;
    throw DomainError("unknown surrogate form '" + name + "'");
}

SurrogateContext surrogate_forward(std::span<const double> z, const Assignment& assignment,
                                   const RadiusSpec& spec, SurrogateForm form) {
    const long d = static_cast<long>(z.size());
    if (static_cast<long>(assignment.zhat.size()) != d)
        throw ShapeError("surrogate_forward: assignment dimension mismatch");
    SurrogateContext ctx;
    ctx.assignment = assignment;
    ctx.form = form;
    ctx.z.assign(z.begin(), z.end());
    ctx.radius = eval_radius(spec, assignment.zhat, z);
    ctx.degenerate = !(ctx.radius.gap > 0.0);
    if (ctx.degenerate) {
        ctx.z_q = ctx.z;
        ctx.scale = 0.0;
        return ctx;
    }
    const double r = ctx.radius.value;
    if (form == SurrogateForm::UnitDirection) {
        ctx.z_q.resize(static_cast<size_t>(d));
        for (long j = 0; j < d; ++j)
            ctx.z_q[static_cast<size_t>(j)] =
                z[static_cast<size_t>(j)] + r * assignment.direction[static_cast<size_t>(j)];
        ctx.scale = 1.0;
    } else {
        // z + r·(ẑ−z)/r collapses to ẑ; keep the forward value exact and fold
        // the frozen ratio (gap/r)·s into the backward scaling instead.
        ctx.z_q = assignment.zhat;
        ctx.scale = r > 0.0 ? ctx.radius.gap / r : 0.0;
    }
    return ctx;
}

SurrogateGrad surrogate_backward(const SurrogateContext& ctx, std::span<const double> upstream) {
    const long d = static_cast<long>(ctx.z.size());
    if (static_cast<long>(upstream.size()) != d)
        throw ShapeError("surrogate_backward: upstream dimension mismatch");
    SurrogateGrad out;
    out.grad_z.assign(upstream.begin(), upstream.end());
    out.code_signal.assign(static_cast<size_t>(d), 0.0);
    for (long j = 0; j < d; ++j)
        out.a += upstream[static_cast<size_t>(j)] * ctx.assignment.direction[static_cast<size_t>(j)];
    if (ctx.degenerate || ctx.scale == 0.0) return out;
    const double c = ctx.scale * out.a;
    for (long j = 0; j < d; ++j) {
        out.grad_z[static_cast<size_t>(j)] += c * ctx.radius.grad_z[static_cast<size_t>(j)];
        out.code_signal[static_cast<size_t>(j)] = c * ctx.radius.grad_zhat[static_cast<size_t>(j)];
    }
    return out;
}

Mat jacobian_dense(const SurrogateContext& ctx) {
    const long d = static_cast<long>(ctx.z.size());
    Mat j = Mat::identity(d);
    if (ctx.degenerate || ctx.scale == 0.0) return j;
    for (long i = 0; i < d; ++i)
        for (long c = 0; c < d; ++c)
            j(i, c) += ctx.scale * ctx.assignment.direction[static_cast<size_t>(i)] *
                       ctx.radius.grad_z[static_cast<size_t>(c)];
    return j;
}

Mat accumulate_code_signals(const std::vector<SurrogateContext>& ctxs, const Mat& upstream,
                            long K) {
    if (static_cast<long>(ctxs.size()) != upstream.rows)
        throw ShapeError("accumulate_code_signals: batch length mismatch");
    const long d = upstream.cols;
    Mat g(K, d);
    for (long p = 0; p < upstream.rows; ++p) {
        const auto& ctx = ctxs[static_cast<size_t>(p)];
        if (static_cast<long>(ctx.z.size()) != d)
            throw ShapeError("accumulate_code_signals: context dimension mismatch");
        const long i = ctx.assignment.index;
        if (i < 0 || i >= K) throw DomainError("accumulate_code_signals: index out of range");
        auto bw = surrogate_backward(ctx, std::span<const double>(upstream.row(p),
                                                                  static_cast<size_t>(d)));
        for (long j = 0; j < d; ++j) g(i, j) += bw.code_signal[static_cast<size_t>(j)];
    }
    return g;
}

namespace {

// Gradient through out_i = pre_i / |pre_i|; rows left unnormalized (zero rows)
// pass straight through because normalize_rows skipped them.
Mat chain_row_normalize(const Mat& g, const TransformWork& work) {
    if (!work.pre_norm.same_shape(g))
        throw ShapeError("transform_backward: work is missing row-normalization state");
    const long K = g.rows, d = g.cols;
    Mat out(K, d);
    for (long i = 0; i < K; ++i) {
        const double n = work.row_norm[static_cast<size_t>(i)];
        double ip = 0.0;
        for (long j = 0; j < d; ++j) ip += g(i, j) * work.pre_norm(i, j) / n;
        for (long j = 0; j < d; ++j)
            out(i, j) = (g(i, j) - ip * work.pre_norm(i, j) / n) / n;
    }
    return out;
}

}  // namespace

TransformGrads transform_backward(const Mat& G, const Mat& E, const TransformSpec& spec,
                                  const TransformWork& work) {
    const long K = E.rows, d = E.cols;
    if (G.rows != K || G.cols != d) throw ShapeError("transform_backward: G must be K x d");
    validate_transform_spec(spec, K, d);
    Mat chained;
    if (spec.row_normalize) chained = chain_row_normalize(G, work);
    const Mat& gref = spec.row_normalize ? chained : G;

    TransformGrads grads;
    switch (spec.kind) {
        case TransformKind::Identity:
            grads.grad_E = gref;
            return grads;
        case TransformKind::LinearLowRank:
        case TransformKind::LowRankNormalized: {
            grads.grad_W = matmul(transpose(work.T3), gref);
            Mat g_t3 = matmul(gref, transpose(spec.W));
            Mat g_t2 = std::move(g_t3);
            if (spec.kind == TransformKind::LowRankNormalized) {
                for (long i = 0; i < K; ++i) {
                    const double s = work.lowrank_scale[static_cast<size_t>(i)];
                    double ip = 0.0;
                    for (long j = 0; j < d; ++j) ip += g_t2(i, j) * work.T2(i, j);
                    for (long j = 0; j < d; ++j)
                        g_t2(i, j) = s * g_t2(i, j) - s * s * s * ip * work.T2(i, j);
                }
            }
            grads.grad_A = matmul(g_t2, transpose(work.T1));
            Mat g_t1 = matmul(transpose(spec.A), g_t2);
            grads.grad_B = matmul(E, transpose(g_t1));
            grads.grad_E = matmul(spec.B, g_t1);
            return grads;
        }
        case TransformKind::AttentionTopK: {
            grads.grad_W = matmul(transpose(work.T3), gref);
            Mat g_t3 = matmul(gref, transpose(spec.W));
            const long kk = spec.k;
            if (static_cast<long>(work.topk.size()) != K * kk)
                throw ShapeError("transform_backward: work is missing the attention state");
            Mat g_p(K, work.P.cols), g_q(K, work.Q.cols);
            grads.grad_E = Mat(K, d);
            const long ds = work.P.cols;
            for (long i = 0; i < K; ++i) {
                const long* winners = &work.topk[static_cast<size_t>(i * kk)];
                const double* alpha = &work.attn[static_cast<size_t>(i * kk)];
                // dL/dα_t through the mixed value row, then the softmax Jacobian.
                double mean_ga = 0.0;
                std::vector<double> g_alpha(static_cast<size_t>(kk));
                for (long t = 0; t < kk; ++t) {
                    double ip = 0.0;
                    for (long j = 0; j < d; ++j) ip += g_t3(i, j) * E(winners[t], j);
                    g_alpha[static_cast<size_t>(t)] = ip;
                    mean_ga += alpha[t] * ip;
                    for (long j = 0; j < d; ++j) grads.grad_E(winners[t], j) += alpha[t] * g_t3(i, j);
                }
                for (long t = 0; t < kk; ++t) {
                    const double g_logit =
                        alpha[t] * (g_alpha[static_cast<size_t>(t)] - mean_ga) / spec.temp;
                    for (long c = 0; c < ds; ++c) {
                        g_p(i, c) += g_logit * work.Q(winners[t], c);
                        g_q(winners[t], c) += g_logit * work.P(i, c);
                    }
                }
            }
            grads.grad_U1 = matmul(transpose(E), g_p);
            grads.grad_V1 = matmul(transpose(E), g_q);
            // Score paths also reach the raw codebook: P = E U1, Q = E V1.
            Mat e_from_p = matmul(g_p, transpose(spec.U1));
            Mat e_from_q = matmul(g_q, transpose(spec.V1));
            for (size_t t = 0; t < grads.grad_E.size(); ++t)
                grads.grad_E.data[t] += e_from_p.data[t] + e_from_q.data[t];
            return grads;
        }
    }
    throw DomainError("unknown transform kind id");
}

std::pair<std::vector<double>, std::vector<double>> ste_forward_backward(
    std::span<const double> z, const Assignment& assignment, std::span<const double> upstream) {
    if (z.size() != assignment.zhat.size() || z.size() != upstream.size())
        throw ShapeError("ste_forward_backward: dimension mismatch");
    return {assignment.zhat, std::vector<double>(upstream.begin(), upstream.end())};
}

Mat ema_codebook_update(const Mat& Etilde, const std::vector<Assignment>& assignments,
                        const Mat& latents, double momentum) {
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw DomainError("ema momentum must lie in [0, 1)");
    if (static_cast<long>(assignments.size()) != latents.rows)
        throw ShapeError("ema_codebook_update: batch length mismatch");
    if (latents.cols != Etilde.cols) throw ShapeError("ema_codebook_update: dimension mismatch");
    const long K = Etilde.rows, d = Etilde.cols;
    Mat sums(K, d);
    std::vector<long> counts(static_cast<size_t>(K), 0);
    for (long p = 0; p < latents.rows; ++p) {
        const long i = assignments[static_cast<size_t>(p)].index;
        if (i < 0 || i >= K) throw DomainError("ema_codebook_update: index out of range");
        ++counts[static_cast<size_t>(i)];
        for (long j = 0; j < d; ++j) sums(i, j) += latents(p, j);
    }
    Mat out = Etilde;
    for (long i = 0; i < K; ++i) {
        if (counts[static_cast<size_t>(i)] == 0) continue;
        for (long j = 0; j < d; ++j) {
            const double mean = sums(i, j) / static_cast<double>(counts[static_cast<size_t>(i)]);
            out(i, j) = momentum * out(i, j) + (1.0 - momentum) * mean;
        }
    }
    return out;
}

}  // namespace gritvq
