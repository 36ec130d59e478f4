// Acceptance gate: one PASS/FAIL line per criterion, tolerances pinned here.
// The binary exits nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gritvq/gradcheck.hpp"
#include "gritvq/harness.hpp"
#include "gritvq/numerics.hpp"
#include "gritvq/quantizer.hpp"
#include "gritvq/serialize.hpp"
#include "gritvq/training.hpp"
#include "oracles.hpp"

using namespace gritvq;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int num, bool pass, const std::string& detail) {
    std::printf("%s criterion %2d: %s\n", pass ? "PASS" : "FAIL", num, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void note(const std::string& text) {
    std::printf("      note: %s\n", text.c_str());
    std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Assignment make_assignment(const std::vector<double>& zhat, const std::vector<double>& z) {
    Assignment a;
    a.index = 0;
    a.zhat = zhat;
    const size_t d = z.size();
    a.direction.resize(d);
    a.residual.resize(d);
    double g2 = 0.0;
    for (size_t j = 0; j < d; ++j) {
        const double diff = zhat[j] - z[j];
        g2 += diff * diff;
        a.residual[j] = -diff;
    }
    a.gap = std::sqrt(g2);
    for (size_t j = 0; j < d; ++j) a.direction[j] = a.gap > 0 ? (zhat[j] - z[j]) / a.gap : 0.0;
    return a;
}

double rel_fro(const Mat& got, const Mat& want) {
    return frobenius_diff(got, want) / std::max(1.0, frobenius(want));
}

std::vector<double> csv_column(const std::string& path, size_t col) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        for (size_t c = 0; c <= col; ++c) std::getline(ss, field, ',');
        out.push_back(std::strtod(field.c_str(), nullptr));
    }
    return out;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- criterion 1
void criterion_1() {
    const auto t0 = Clock::now();
    FDConfig cfg;
    cfg.trials = 200;
    cfg.dims = {2, 8, 32};
    cfg.ks = {4, 64};
    cfg.tolerance = 1e-6;
    cfg.param_probes = 0;  // encoder path only; parameters are criterion 2
    cfg.seed = 9;
    double worst = 0.0;
    std::string worst_combo;
    long combos = 0, warned = 0;
    for (int f = 0; f <= static_cast<int>(RadiusFamily::AdaptiveMahalanobis); ++f) {
        for (int k = 0; k <= static_cast<int>(TransformKind::LowRankNormalized); ++k) {
            GradCheckReport rep = check_pipeline_gradients(static_cast<RadiusFamily>(f),
                                                           static_cast<TransformKind>(k), cfg);
            if (rep.max_rel_err > worst) {
                worst = rep.max_rel_err;
                worst_combo = rep.family + "x" + rep.transform;
            }
            if (rep.high_skip_warning) ++warned;
            ++combos;
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = worst <= 1e-6 && secs <= 300.0 && combos == 40 && warned == 0;
    report(1, pass,
           fmt("encoder gradients vs central differences: worst rel err %.3e (tol 1e-6, worst at "
               "%s), %ld family x transform combos, 200 accepted trials each, %.1fs (cap 300s)",
               worst, worst_combo.c_str(), combos, secs));
}

// ---------------------------------------------------------------- criterion 2
void criterion_2() {
    Rng rng(202);
    const long K = 8, d = 4, r = 2;
    const RadiusFamily fams[] = {RadiusFamily::Euclidean, RadiusFamily::SoftClip,
                                 RadiusFamily::Power, RadiusFamily::PseudoHuber};
    const double h = 1e-5;
    double worst_fd = 0.0;
    long trials = 0;

    while (trials < 100) {
        RadiusSpec rs = sample_radius_spec(fams[trials % 4], d, rng);
        CodebookState cb = init_codebook(K, d, rng);
        TransformSpec spec;
        spec.kind = TransformKind::LinearLowRank;
        spec.rank = r;
        spec.A = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.B = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.W = Mat::identity(d);
        for (auto& x : spec.W.data) x += 0.2 * rng.normal();

        std::vector<double> z(d);
        for (auto& x : z) x = 1.5 * rng.normal();
        TransformedCache cache = refresh_cache(cb, spec, 0);
        Assignment asg = nn_query(cache, z);
        if (asg.gap < 0.05) continue;

        SurrogateContext ctx = surrogate_forward(z, asg, rs, SurrogateForm::UnitDirection);
        std::vector<double> w(d), upstream(d);
        for (long j = 0; j < d; ++j) {
            w[j] = rng.normal();
            upstream[j] = w[j] + ctx.z_q[j];
        }
        SurrogateGrad bw = surrogate_backward(ctx, upstream);
        Mat G(K, d);
        for (long j = 0; j < d; ++j) G(asg.index, j) = bw.code_signal[j];
        TransformWork work;
        apply_transform(spec, cb.E, &work);
        TransformGrads tg = transform_backward(G, cb.E, spec, work);

        // frozen-assignment loss: selection index and step direction pinned
        auto loss_at = [&](const TransformSpec& s) {
            Mat ep = apply_transform(s, cb.E);
            RadiusEval re = eval_radius(
                rs, std::span<const double>(ep.row(asg.index), static_cast<size_t>(d)), z);
            double l = 0.0;
            for (long j = 0; j < d; ++j) {
                const double y = z[j] + re.value * asg.direction[j];
                l += w[j] * y + 0.5 * y * y;
            }
            return l;
        };
        auto probe = [&](Mat TransformSpec::* field, const Mat& analytic) {
            for (int p = 0; p < 4; ++p) {
                TransformSpec s = spec;
                Mat& m = s.*field;
                const size_t idx = static_cast<size_t>(rng.below(static_cast<long>(m.size())));
                const double orig = m.data[idx];
                m.data[idx] = orig + h;
                const double fp = loss_at(s);
                m.data[idx] = orig - h;
                const double fm = loss_at(s);
                const double fd = (fp - fm) / (2 * h);
                worst_fd = std::max(worst_fd,
                                    std::abs(analytic.data[idx] - fd) / std::max(1.0, std::abs(fd)));
            }
        };
        probe(&TransformSpec::A, tg.grad_A);
        probe(&TransformSpec::B, tg.grad_B);
        probe(&TransformSpec::W, tg.grad_W);
        ++trials;
    }

    // closed forms on materializable instances, against exact differences of
    // the (multi)linear loss L = <G, M E W>
    double worst_w_identity = 0.0, worst_m_corrected = 0.0, best_m_literal = 0.0;
    Rng irng(203);
    for (int inst = 0; inst < 50; ++inst) {
        CodebookState cb = init_codebook(K, d, irng);
        TransformSpec spec;
        spec.kind = TransformKind::LinearLowRank;
        spec.rank = r;
        spec.A = random_normal(irng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.B = random_normal(irng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.W = Mat::identity(d);
        for (auto& x : spec.W.data) x += 0.2 * irng.normal();
        Mat G = random_normal(irng, K, d);

        Mat mixer = materialize_mixer(spec, cb.E);
        TransformWork work;
        apply_transform(spec, cb.E, &work);
        TransformGrads tg = transform_backward(G, cb.E, spec, work);

        Mat closed_w =
            oracle::matmul_naive(oracle::matmul_naive(transpose(cb.E), transpose(mixer)), G);
        worst_w_identity = std::max(worst_w_identity, rel_fro(tg.grad_W, closed_w));

        Mat grad_m_corrected =
            oracle::matmul_naive(oracle::matmul_naive(G, transpose(spec.W)), transpose(cb.E));
        Mat grad_m_literal = oracle::matmul_naive(oracle::matmul_naive(G, spec.W), transpose(cb.E));
        // exact derivative of the linear map M -> <G, M E W>, probed densely
        Mat ew = oracle::matmul_naive(cb.E, spec.W);
        Mat grad_m_exact(K, K);
        for (long i = 0; i < K; ++i)
            for (long t = 0; t < K; ++t)
                for (long j = 0; j < d; ++j) grad_m_exact(i, t) += G(i, j) * ew(t, j);
        worst_m_corrected = std::max(worst_m_corrected, rel_fro(grad_m_exact, grad_m_corrected));
        best_m_literal = std::max(best_m_literal, rel_fro(grad_m_exact, grad_m_literal));
    }

    const bool pass = worst_fd <= 1e-5 && worst_w_identity <= 1e-10 && worst_m_corrected <= 1e-10;
    report(2, pass,
           fmt("transform-parameter gradients, K=8 d=4 rank=2: FD worst rel err %.3e over %ld "
               "trials (tol 1e-5); grad_W = E^T M^T G within %.3e (tol 1e-10); grad_M = G W^T E^T "
               "within %.3e (tol 1e-10)",
               worst_fd, trials, worst_w_identity, worst_m_corrected));
    note(fmt("the non-transposed variant G W E^T deviates from the exact derivative by up to "
             "%.3f; the transposed form above is what the implementation and the exact "
             "differences agree on",
             best_m_literal));
}

// ---------------------------------------------------------------- criterion 3
void criterion_3() {
    const long d = 6;
    double worst = 0.0;
    long contexts = 0;
    for (int f = 0; f <= static_cast<int>(RadiusFamily::AdaptiveMahalanobis); ++f) {
        Rng rng(300 + f);
        for (int c = 0; c < 100; ++c) {
            RadiusSpec rs = sample_radius_spec(static_cast<RadiusFamily>(f), d, rng);
            std::vector<double> z(d), zhat(d);
            for (long j = 0; j < d; ++j) {
                z[j] = rng.normal();
                zhat[j] = z[j] + 0.8 * rng.normal();
            }
            Assignment a = make_assignment(zhat, z);
            if (a.gap < 0.1) {
                --c;
                continue;
            }
            SurrogateContext ctx = surrogate_forward(z, a, rs, SurrogateForm::UnitDirection);
            Mat J = jacobian_dense(ctx);
            const double lam = 1.0 - ctx.radius.rho_prime;

            // trace fixes the eigenvalue sum
            double tr = 0.0;
            for (long i = 0; i < d; ++i) tr += J(i, i);
            worst = std::max(worst, std::abs(tr - (d - 1 + lam)));

            // (J - I)(J - lam I) = 0 confines the spectrum to {1, lam}
            Mat j1 = J, j2 = J;
            for (long i = 0; i < d; ++i) {
                j1(i, i) -= 1.0;
                j2(i, i) -= lam;
            }
            Mat annihil = oracle::matmul_naive(j1, j2);
            for (double v : annihil.data) worst = std::max(worst, std::abs(v));

            // symmetric families: cross-check the full spectrum directly
            double asym = 0.0;
            for (long i = 0; i < d; ++i)
                for (long j = 0; j < d; ++j) asym = std::max(asym, std::abs(J(i, j) - J(j, i)));
            if (asym < 1e-12) {
                auto ev = oracle::eig_sym(J);
                std::vector<double> want(static_cast<size_t>(d), 1.0);
                want[0] = lam;
                std::sort(want.begin(), want.end());
                std::sort(ev.begin(), ev.end());
                for (long i = 0; i < d; ++i)
                    worst = std::max(worst, std::abs(ev[static_cast<size_t>(i)] -
                                                     want[static_cast<size_t>(i)]));
            }
            ++contexts;
        }
    }
    report(3, worst <= 1e-8 && contexts == 1000,
           fmt("surrogate jacobian spectrum {1 x(d-1), 1-rho'}: worst deviation %.3e (tol 1e-8) "
               "over %ld contexts, 100 per family, d=6",
               worst, contexts));
}

// ---------------------------------------------------------------- criterion 4
void criterion_4() {
    const std::vector<double> etas = {1e-2, 5e-3, 2.5e-3, 1.25e-3};
    RadiusSpec euclid;
    RadiusSpec soft;
    soft.family = RadiusFamily::SoftClip;
    soft.tau = 1.5;
    RadiusSpec ph;
    ph.family = RadiusFamily::PseudoHuber;
    ph.delta_h = 1.0;
    bool pass = true;
    std::string detail = "gap update residual log-log slope";
    for (const RadiusSpec& rs : {euclid, soft, ph}) {
        ContractionReport rep = contraction_experiment(rs, etas, 60, 4);
        pass = pass && rep.slope >= 1.8 && rep.slope <= 2.2;
        detail += fmt(" %s=%.3f", rep.family.c_str(), rep.slope);
    }
    report(4, pass, detail + " (bounds [1.8, 2.2], 60 trials each)");
}

// ---------------------------------------------------------------- criterion 5
void criterion_5() {
    // shared low-rank mixer: one step moves every transformed row
    Rng rng(500);
    const long K = 16, d = 8;
    CodebookState cb = init_codebook(K, d, rng);
    TransformSpec tf;
    tf.kind = TransformKind::LinearLowRank;
    init_lowrank_ortho(tf, K, 4, rng);
    tf.W = Mat::identity(d);
    RadiusSpec rs;
    TrainConfig cfg;
    cfg.protocol = Protocol::FrozenE;
    cfg.steps = 1;
    cfg.batch = 6;
    Trainer coupled(cb, tf, rs, SurrogateForm::UnitDirection, Method::GRIT, cfg);
    Mat batch = random_normal(rng, 6, d, 1.5);
    auto asg = coupled.assign_batch(batch);
    std::set<long> selected;
    for (const auto& a : asg) selected.insert(a.index);
    Mat before = apply_transform(coupled.transform(), coupled.codebook().E);
    coupled.step(batch);
    Mat after = apply_transform(coupled.transform(), coupled.codebook().E);
    double min_change = 1e300;
    for (long i = 0; i < K; ++i) {
        double c2 = 0.0;
        for (long j = 0; j < d; ++j) {
            const double diff = after(i, j) - before(i, j);
            c2 += diff * diff;
        }
        min_change = std::min(min_change, std::sqrt(c2));
    }
    const bool coupled_ok = selected.size() < static_cast<size_t>(K) && min_change > 0.0;

    // identity transform, direct-E protocol: untouched rows stay bit-identical
    Rng rng2(501);
    CodebookState cb2 = init_codebook(K, d, rng2);
    TransformSpec tf2;  // identity
    TrainConfig cfg2;
    cfg2.protocol = Protocol::JointDirect;
    cfg2.lambda_u = 0.0;
    cfg2.steps = 1;
    cfg2.batch = 6;
    Trainer isolated(cb2, tf2, rs, SurrogateForm::UnitDirection, Method::GRIT, cfg2);
    Mat batch2 = random_normal(rng2, 6, d, 1.5);
    auto asg2 = isolated.assign_batch(batch2);
    std::set<long> selected2;
    for (const auto& a : asg2) selected2.insert(a.index);
    Mat e_before = isolated.codebook().E;
    isolated.step(batch2);
    const Mat& e_after = isolated.codebook().E;
    long untouched_equal = 0, untouched = 0, touched_moved = 0;
    for (long i = 0; i < K; ++i) {
        bool same = true;
        for (long j = 0; j < d; ++j) same = same && e_before(i, j) == e_after(i, j);
        if (selected2.count(i)) {
            if (!same) ++touched_moved;
        } else {
            ++untouched;
            if (same) ++untouched_equal;
        }
    }
    const bool isolated_ok = untouched > 0 && untouched_equal == untouched &&
                             touched_moved == static_cast<long>(selected2.size());
    report(5, coupled_ok && isolated_ok,
           fmt("coupling: low-rank mixer step with %zu/%ld codes selected moved every transformed "
               "row (min change %.3e); identity transform left all %ld unselected raw rows "
               "bit-identical",
               selected.size(), K, min_change, untouched));
}

// ---------------------------------------------------------------- criterion 6
void criterion_6() {
    const long K = 8, d = 4, r = 2;
    long lower_viol_pairs = 0, upper_viol_pairs = 0, pairs = 0;
    int lower_viol_instances = 0;
    double worst_ratio = 1e300;
    for (int inst = 0; inst < 50; ++inst) {
        Rng rng(600 + inst);
        CodebookState cb = init_codebook(K, d, rng);
        TransformSpec spec;
        spec.kind = TransformKind::LinearLowRank;
        spec.rank = r;
        spec.A = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.B = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.W = Mat::identity(d);
        for (auto& x : spec.W.data) x += 0.15 * rng.normal();

        Mat mixer = materialize_mixer(spec, cb.E);
        Mat eprime = apply_transform(spec, cb.E);
        const auto sv_e = oracle::singular_values(cb.E);
        const auto sv_w = oracle::singular_values(spec.W);
        const double lo_scale = sv_e.back() * sv_w.back();
        const double hi_scale = sv_e.front() * sv_w.front();
        bool inst_viol = false;
        for (long i = 0; i < K; ++i)
            for (long j = i + 1; j < K; ++j) {
                double m2 = 0.0, c2 = 0.0;
                for (long t = 0; t < K; ++t) {
                    const double dm = mixer(i, t) - mixer(j, t);
                    m2 += dm * dm;
                }
                for (long t = 0; t < d; ++t) {
                    const double dc = eprime(i, t) - eprime(j, t);
                    c2 += dc * dc;
                }
                const double mdiff = std::sqrt(m2), cdiff = std::sqrt(c2);
                ++pairs;
                if (cdiff < mdiff * lo_scale * (1.0 - 1e-9)) {
                    ++lower_viol_pairs;
                    inst_viol = true;
                    worst_ratio = std::min(worst_ratio, cdiff / (mdiff * lo_scale));
                }
                if (cdiff > mdiff * hi_scale * (1.0 + 1e-9)) ++upper_viol_pairs;
            }
        if (inst_viol) ++lower_viol_instances;
    }
    const bool pass = lower_viol_pairs == 0 && upper_viol_pairs == 0;
    report(6, pass,
           fmt("distance sandwich sigma_min(E)sigma_min(W) <= |c'_i-c'_j|/|M_i-M_j| <= "
               "sigma_max(E)sigma_max(W): lower bound violated on %ld/%ld pairs across %d/50 "
               "instances (worst ratio %.3f), upper bound violated on %ld pairs",
               lower_viol_pairs, pairs, lower_viol_instances, worst_ratio, upper_viol_pairs));
    if (!pass)
        note("expected failure: with K > d a mixer row-difference can lie arbitrarily close to "
             "the left null space of E, so no sigma_min(E) lower bound can hold; the bound is "
             "recovered when col(B) is restricted to range(E) (see test_codebook \"distance "
             "sandwich holds when the mixer respects the code span\"). The upper bound is "
             "unconditional.");
}

// ---------------------------------------------------------------- criterion 7
void criterion_7() {
    Rng rng(700);
    const long K = 32, d = 8;
    CodebookState cb = init_codebook(K, d, rng);
    TransformSpec tf;
    tf.kind = TransformKind::LinearLowRank;
    init_lowrank_ortho(tf, K, 4, rng);
    tf.W = Mat::identity(d);
    for (auto& x : tf.W.data) x += 0.1 * rng.normal();
    tf.row_normalize = true;
    RadiusSpec rs;
    TrainConfig cfg;
    cfg.protocol = Protocol::FrozenE;
    cfg.lr_W = 5e-3;
    cfg.tau_w = 1.5;
    cfg.steps = 300;
    cfg.batch = 32;
    cfg.cache_T = 4;
    Trainer tr(cb, tf, rs, SurrogateForm::UnitDirection, Method::GRIT, cfg);
    double worst_norm = 0.0, worst_sigma = 0.0;
    for (long s = 0; s < 300; ++s) {
        Mat batch = random_normal(rng, 32, d, 1.5);
        tr.step(batch);
        const Mat& ep = tr.cache().Eprime;
        for (long i = 0; i < K; ++i)
            worst_norm = std::max(worst_norm, std::abs(norm2(ep.row(i), d) - 1.0));
        worst_sigma = std::max(worst_sigma, spectral_norm(tr.transform().W));
    }
    const bool pass = worst_norm <= 1e-10 && worst_sigma <= cfg.tau_w + 1e-6;
    report(7, pass,
           fmt("gauge invariants over 300 steps: cached row norms within %.3e of 1 (tol 1e-10), "
               "max sigma_max(W) %.9f vs cap %.1f + 1e-6",
               worst_norm, worst_sigma, cfg.tau_w));
}

// ---------------------------------------------------------------- criterion 8
void criterion_8() {
    Rng rng(800);
    const long K = 1024, d = 32, n = 10000;
    CodebookState cb = init_codebook(K, d, rng);
    TransformSpec tf;
    TransformedCache cache = refresh_cache(cb, tf, 0);
    Mat z = random_normal(rng, n, d, 2.0);
    auto fast = batch_nn(cache, z);
    long index_mismatch = 0;
    double worst_gap = 0.0;
    for (long p = 0; p < n; ++p) {
        long best = 0;
        double best_d2 = 1e300;
        for (long i = 0; i < K; ++i) {
            double d2 = 0.0;
            for (long j = 0; j < d; ++j) {
                const double diff = z(p, j) - cache.Eprime(i, j);
                d2 += diff * diff;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        if (fast[static_cast<size_t>(p)].index != best) ++index_mismatch;
        worst_gap = std::max(
            worst_gap, std::abs(fast[static_cast<size_t>(p)].gap - std::sqrt(best_d2)));
    }
    report(8, index_mismatch == 0 && worst_gap <= 1e-10,
           fmt("precomputed-norm NN vs exhaustive oracle, %ld queries K=%ld d=%ld: %ld index "
               "mismatches, worst gap deviation %.3e (tol 1e-10)",
               n, K, d, index_mismatch, worst_gap));
}

// ---------------------------------------------------------------- criterion 9
void criterion_9() {
    const auto t0 = Clock::now();
    Comparison cmp =
        compare_methods({collapse_preset(Method::GRIT, 0), collapse_preset(Method::STE, 0)}, 5);
    const double secs = seconds_since(t0);
    size_t u = 0, q = 0;
    for (size_t i = 0; i < cmp.metrics.size(); ++i) {
        if (cmp.metrics[i] == "utilization") u = i;
        if (cmp.metrics[i] == "quant_mse") q = i;
    }
    int util_wins = 0;
    for (long s = 0; s < 5; ++s)
        if (cmp.values[0][u][static_cast<size_t>(s)] >= cmp.values[1][u][static_cast<size_t>(s)])
            ++util_wins;
    const double mse_ratio = cmp.mean[0][q] / cmp.mean[1][q];
    const bool pass = util_wins >= 4 && mse_ratio <= 1.05 && secs <= 600.0;
    report(9, pass,
           fmt("collapse preset, 5 seeds x 5k steps: utilization %.3f vs %.3f (wins %d/5, need "
               ">=4), mean quant MSE ratio %.4f (cap 1.05), %.0fs (cap 600s)",
               cmp.mean[0][u], cmp.mean[1][u], util_wins, mse_ratio, secs));
}

// --------------------------------------------------------------- criterion 10
void criterion_10() {
    const long ts[] = {1, 8, 16};
    double worst_util_spread = 0.0, worst_mse_rel = 0.0;
    for (long s = 0; s < 5; ++s) {
        double umin = 1e300, umax = -1e300, qmin = 1e300, qmax = -1e300;
        for (long T : ts) {
            ExperimentConfig cfg = collapse_preset(Method::GRIT, 0);
            cfg.task.seed += s;
            cfg.train.seed += s;
            cfg.train.cache_T = T;
            RunResult r = run_experiment(cfg);
            umin = std::min(umin, r.utilization);
            umax = std::max(umax, r.utilization);
            qmin = std::min(qmin, r.quant_mse);
            qmax = std::max(qmax, r.quant_mse);
        }
        worst_util_spread = std::max(worst_util_spread, umax - umin);
        worst_mse_rel = std::max(worst_mse_rel, (qmax - qmin) / qmin);
    }
    const bool pass = worst_util_spread <= 0.05 && worst_mse_rel <= 0.05;
    report(10, pass,
           fmt("cache interval robustness, T in {1,8,16} x 5 seeds: worst utilization spread "
               "%.4f (cap 0.05), worst quant MSE relative spread %.4f (cap 0.05)",
               worst_util_spread, worst_mse_rel));
}

// --------------------------------------------------------------- criterion 11
void criterion_11() {
    BenchReport rep = bench_transform_scaling({256, 512, 1024, 2048, 4096}, 32, 32, 5);
    bool pass = true;
    std::string ratios;
    for (double r : rep.doubling_ratios) {
        pass = pass && r >= 1.6 && r <= 2.6;
        ratios += fmt(" %.2f", r);
    }
    report(11, pass,
           fmt("apply_transform K-doubling time ratios (min-of-5):%s (bounds [1.6, 2.6])",
               ratios.c_str()));
}

// --------------------------------------------------------------- criterion 12
void criterion_12() {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "gritvq_acceptance" / "c12";
    fs::remove_all(base);

    ExperimentConfig init_only = collapse_preset(Method::GRIT, 0);
    init_only.train.steps = 0;
    init_only.out_path = (base / "init").string();
    run_experiment(init_only);

    ExperimentConfig full = collapse_preset(Method::GRIT, 0);
    full.out_path = (base / "run").string();
    run_experiment(full);

    auto load_e = [](const fs::path& p) {
        std::ifstream in(p / "codebook.json");
        auto j = nlohmann::json::parse(in);
        return codebook_from_json(j["codebook"]).E;
    };
    const Mat e0 = load_e(base / "init");
    const Mat e1 = load_e(base / "run");
    bool identical = e0.rows == e1.rows && e0.cols == e1.cols;
    for (size_t i = 0; identical && i < e0.size(); ++i) identical = e0.data[i] == e1.data[i];

    const auto util = csv_column((base / "run" / "metrics.csv").string(), 2);
    double first = util.empty() ? 0.0 : util.front();
    double min_util = 1e300;
    for (double v : util) min_util = std::min(min_util, v);
    const bool stable = !util.empty() && min_util >= first - 0.10;
    fs::remove_all(base);
    report(12, identical && stable,
           fmt("frozen-codebook protocol over 5k steps: E bit-identical to initialization (%s), "
               "utilization series min %.3f vs initial %.3f (allowed drop 0.10)",
               identical ? "yes" : "NO", min_util, first));
}

// --------------------------------------------------------------- criterion 13
void criterion_13() {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path() / "gritvq_acceptance" / "c13";
    fs::remove_all(base);

    ExperimentConfig cfg;
    cfg.task.d = 8;
    Rng mrng(13);
    cfg.task.gmm.means = random_normal(mrng, 4, 8, 2.0);
    cfg.task.gmm.weights.assign(4, 0.25);
    cfg.task.gmm.cov_scale = 0.5;
    cfg.task.n_train = 512;
    cfg.task.n_eval = 1024;
    cfg.task.seed = 13;
    cfg.K = 32;
    cfg.method = Method::GRIT;
    cfg.transform.kind = TransformKind::LinearLowRank;
    Rng trng(14);
    init_lowrank_ortho(cfg.transform, 32, 4, trng);
    cfg.transform.W = Mat::identity(8);
    cfg.train.protocol = Protocol::JointDirect;
    cfg.train.steps = 400;
    cfg.train.batch = 64;
    cfg.train.cache_T = 4;
    cfg.train.t_scan = 100;
    cfg.log_every = 20;

    cfg.out_path = (base / "a").string();
    run_experiment(cfg);
    cfg.out_path = (base / "b").string();
    run_experiment(cfg);
    const std::string a = read_bytes((base / "a" / "metrics.csv").string());
    const std::string b = read_bytes((base / "b" / "metrics.csv").string());
    const bool pass = !a.empty() && a == b;
    fs::remove_all(base);
    report(13, pass,
           fmt("determinism: two runs of the same (config, seed) produced %s metrics.csv byte "
               "streams (%zu bytes)",
               pass ? "identical" : "DIFFERENT", a.size()));
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    struct {
        int num;
        void (*fn)();
    } criteria[] = {{1, criterion_1},   {2, criterion_2},   {3, criterion_3},  {4, criterion_4},
                    {5, criterion_5},   {6, criterion_6},   {7, criterion_7},  {8, criterion_8},
                    {9, criterion_9},   {10, criterion_10}, {11, criterion_11},
                    {12, criterion_12}, {13, criterion_13}};
    for (const auto& c : criteria) {
        try {
            c.fn();
        } catch (const std::exception& e) {
            report(c.num, false, fmt("exception: %s", e.what()));
        }
    }
    std::printf("%d/13 criteria passed in %.0fs\n", 13 - g_failures, seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
