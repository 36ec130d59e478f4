#include "gritvq/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "gritvq/numerics.hpp"

namespace gritvq {

namespace {

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max(1.0, std::abs(fd));
}

// distance from z to row i of Eprime
double row_dist(const Mat& Eprime, long i, const std::vector<double>& z) {
    double d2 = 0.0;
    for (long j = 0; j < Eprime.cols; ++j) {
        const double t = Eprime(i, j) - z[static_cast<size_t>(j)];
        d2 += t * t;
    }
    return std::sqrt(d2);
}

double second_best_gap(const Mat& Eprime, const std::vector<double>& z, long best) {
    double runner = 1e300;
    for (long i = 0; i < Eprime.rows; ++i) {
        if (i == best) continue;
        runner = std::min(runner, row_dist(Eprime, i, z));
    }
    return runner;
}

Mat random_spd(long d, Rng& rng) {
    Mat R = random_normal(rng, d, d);
    Mat P(d, d);
    for (long i = 0; i < d; ++i)
        for (long j = 0; j < d; ++j) {
            double acc = 0.0;
            for (long k = 0; k < d; ++k) acc += R(k, i) * R(k, j);
            P(i, j) = acc / static_cast<double>(d) + (i == j ? 0.5 : 0.0);
        }
    return P;
}

}  // namespace

void validate_fd_config(const FDConfig& cfg) {
    if (!(cfg.h > 0)) throw DomainError("fd step h must be positive");
    if (!(cfg.boundary_margin > 0)) throw DomainError("boundary margin must be positive");
    if (cfg.trials < 1) throw DomainError("trials must be at least 1");
    if (cfg.dims.empty() || cfg.ks.empty()) throw DomainError("dims and ks must be nonempty");
    for (long d : cfg.dims)
        if (d < 1) throw DomainError("dims entries must be positive");
    for (long k : cfg.ks)
        if (k < 2) throw DomainError("ks entries must be at least 2");
    if (!(cfg.tolerance > 0)) throw DomainError("tolerance must be positive");
    if (cfg.param_probes < 0) throw DomainError("param_probes must be nonnegative");
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                const std::vector<double>& x, double h) {
    if (!(h > 0)) throw DomainError("fd step h must be positive");
    std::vector<double> g(x.size());
    std::vector<double> probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (std::isnan(fp) || std::isnan(fm))
            throw DomainError("fd probe returned NaN at coordinate " + std::to_string(i));
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

std::string report_json(const GradCheckReport& r) {
    nlohmann::json j;
    j["family"] = r.family;
    j["transform"] = r.transform;
    j["max_rel_err"] = r.max_rel_err;
    j["mean_rel_err"] = r.mean_rel_err;
    j["param_max_rel_err"] = r.param_max_rel_err;
    j["skip_rate"] = r.skip_rate;
    j["trials"] = r.trials;
    j["high_skip_warning"] = r.high_skip_warning;
    return j.dump();
}

RadiusSpec sample_radius_spec(RadiusFamily family, long d, Rng& rng) {
    RadiusSpec rs;
    rs.family = family;
    switch (family) {
        case RadiusFamily::Euclidean:
            break;
        case RadiusFamily::Clipped:
            rs.tau = rng.uniform(0.8, 2.5);
            break;
        case RadiusFamily::Power:
            rs.alpha = rng.uniform(1.5, 3.0);
            break;
        case RadiusFamily::Huber:
            rs.delta_h = rng.uniform(0.8, 2.0);
            break;
        case RadiusFamily::Mahalanobis:
            rs.precision = random_spd(d, rng);
            break;
        case RadiusFamily::SoftClip:
            rs.tau = rng.uniform(0.8, 3.0);
            break;
        case RadiusFamily::PseudoHuber:
            rs.delta_h = rng.uniform(0.5, 2.0);
            break;
        case RadiusFamily::PNorm:
            rs.p = rng.uniform(1.5, 3.0);
            // a soft corner wide enough for 1e-5 probes to see a smooth function
            rs.eps_p = rng.uniform(0.05, 0.2);
            break;
        case RadiusFamily::Temperature:
            rs.temp = rng.uniform(0.5, 2.0);
            break;
        case RadiusFamily::AdaptiveMahalanobis:
            rs.precision = random_spd(d, rng);
            rs.ema_beta = 0.1;
            break;
    }
    validate_radius_spec(rs, d);
    return rs;
}

TransformSpec sample_transform_spec(TransformKind kind, long K, long d, Rng& rng) {
    TransformSpec spec;
    spec.kind = kind;
    const long rmax = std::min(K, d);
    switch (kind) {
        case TransformKind::Identity:
            break;
        case TransformKind::LinearLowRank:
        case TransformKind::LowRankNormalized: {
            const long r = std::min(rmax, 2 + static_cast<long>(rng.below(3)));
            spec.rank = r;
            spec.A = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
            spec.B = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
            spec.W = Mat::identity(d);
            for (auto& x : spec.W.data) x += 0.2 * rng.normal();
            spec.temp = rng.uniform(0.5, 1.5);
            spec.row_normalize = rng.uniform() < 0.5;
            break;
        }
        case TransformKind::AttentionTopK: {
            const long ds = std::min(d, 3L);
            spec.U1 = random_normal(rng, d, ds);
            spec.V1 = random_normal(rng, d, ds);
            spec.k = std::min(K, 2 + static_cast<long>(rng.below(3)));
            spec.temp = rng.uniform(0.5, 2.0);
            spec.W = Mat::identity(d);
            for (auto& x : spec.W.data) x += 0.2 * rng.normal();
            spec.row_normalize = rng.uniform() < 0.5;
            break;
        }
    }
    validate_transform_spec(spec, K, d);
    return spec;
}

GradCheckReport check_pipeline_gradients(RadiusFamily family, TransformKind kind,
                                         const FDConfig& cfg) {
    validate_fd_config(cfg);
    GradCheckReport rep;
    rep.family = family_name(family);
    rep.transform = kind_name(kind);
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(family) * 131 +
            static_cast<uint64_t>(kind) * 7 + 1);

    long accepted = 0, skipped = 0;
    double err_sum = 0.0;
    const long sample_cap = cfg.trials * 50;
    long sampled = 0;

    while (accepted < cfg.trials && sampled < sample_cap) {
        ++sampled;
        const long d = cfg.dims[rng.below(cfg.dims.size())];
        const long K = cfg.ks[rng.below(cfg.ks.size())];
        CodebookState cb = init_codebook(K, d, rng);
        TransformSpec spec = sample_transform_spec(kind, K, d, rng);
        RadiusSpec rs = sample_radius_spec(family, d, rng);
        std::vector<double> z(static_cast<size_t>(d));
        for (auto& x : z) x = 1.5 * rng.normal();

        TransformedCache cache = refresh_cache(cb, spec, 0);
        Assignment asg = nn_query(cache, z);

        // boundary filter: margin plus +-h index-flip probes
        bool skip = asg.gap < 0.05;
        if (!skip && second_best_gap(cache.Eprime, z, asg.index) - asg.gap < cfg.boundary_margin)
            skip = true;
        if (!skip) {
            std::vector<double> probe = z;
            for (long i = 0; i < d && !skip; ++i) {
                for (double sgn : {1.0, -1.0}) {
                    probe[static_cast<size_t>(i)] = z[static_cast<size_t>(i)] + sgn * cfg.h;
                    if (nn_query(cache, probe).index != asg.index) {
                        skip = true;
                        break;
                    }
                }
                probe[static_cast<size_t>(i)] = z[static_cast<size_t>(i)];
            }
        }
        // the clipped and huber radii switch branches at the knee; keep probes
        // on one side of it
        if (!skip && family == RadiusFamily::Clipped && std::abs(asg.gap - rs.tau) < 0.01)
            skip = true;
        if (!skip && family == RadiusFamily::Huber && std::abs(asg.gap - rs.delta_h) < 0.01)
            skip = true;
        if (skip) {
            ++skipped;
            continue;
        }
        ++accepted;

        SurrogateContext ctx = surrogate_forward(z, asg, rs, SurrogateForm::UnitDirection);
        std::vector<double> w(static_cast<size_t>(d));
        for (auto& x : w) x = rng.normal();
        // downstream loss sum_j (w_j y_j + y_j^2 / 2), gradient w + y
        auto loss_at = [&](const std::vector<double>& y) {
            double acc = 0.0;
            for (size_t j = 0; j < y.size(); ++j) acc += w[j] * y[j] + 0.5 * y[j] * y[j];
            return acc;
        };
        std::vector<double> upstream(static_cast<size_t>(d));
        for (size_t j = 0; j < upstream.size(); ++j) upstream[j] = w[j] + ctx.z_q[j];
        SurrogateGrad bw = surrogate_backward(ctx, upstream);

        // encoder gradient: perturb z with the stop-gradient direction frozen
        const std::vector<double> s0 = asg.direction;
        auto pipeline_z = [&](const std::vector<double>& zp) {
            RadiusEval re = eval_radius(rs, asg.zhat, zp);
            std::vector<double> y(zp.size());
            for (size_t j = 0; j < y.size(); ++j) y[j] = zp[j] + re.value * s0[j];
            return loss_at(y);
        };
        std::vector<double> fd = fd_gradient(pipeline_z, z, cfg.h);
        double trial_err = 0.0;
        for (long j = 0; j < d; ++j)
            trial_err = std::max(
                trial_err, rel_err(bw.grad_z[static_cast<size_t>(j)], fd[static_cast<size_t>(j)]));
        rep.max_rel_err = std::max(rep.max_rel_err, trial_err);
        err_sum += trial_err;

        if (cfg.param_probes > 0) {
            Mat G(K, d);
            for (long j = 0; j < d; ++j) G(asg.index, j) = bw.code_signal[static_cast<size_t>(j)];
            TransformGrads tg = transform_backward(G, cb.E, spec, cache.work);
            const std::vector<long>* frozen =
                kind == TransformKind::AttentionTopK ? &cache.work.topk : nullptr;
            auto param_loss = [&] {
                Mat Ep = apply_transform(spec, cb.E, nullptr, frozen);
                RadiusEval re = eval_radius(
                    rs, std::span<const double>(Ep.row(asg.index), static_cast<size_t>(d)), z);
                std::vector<double> y(z.size());
                for (size_t j = 0; j < y.size(); ++j) y[j] = z[j] + re.value * s0[j];
                return loss_at(y);
            };
            auto probe_param = [&](Mat& param, const Mat& analytic) {
                if (param.rows == 0) return;
                for (long n = 0; n < cfg.param_probes; ++n) {
                    const size_t e = static_cast<size_t>(rng.below(param.size()));
                    const double orig = param.data[e];
                    param.data[e] = orig + cfg.h;
                    const double fp = param_loss();
                    param.data[e] = orig - cfg.h;
                    const double fm = param_loss();
                    param.data[e] = orig;
                    rep.param_max_rel_err = std::max(
                        rep.param_max_rel_err, rel_err(analytic.data[e], (fp - fm) / (2 * cfg.h)));
                }
            };
            probe_param(spec.W, tg.grad_W);
            probe_param(spec.A, tg.grad_A);
            probe_param(spec.B, tg.grad_B);
            probe_param(spec.U1, tg.grad_U1);
            probe_param(spec.V1, tg.grad_V1);
            probe_param(cb.E, tg.grad_E);
        }
    }

    rep.trials = accepted;
    rep.skip_rate = sampled > 0 ? static_cast<double>(skipped) / static_cast<double>(sampled) : 0.0;
    rep.mean_rel_err = accepted > 0 ? err_sum / static_cast<double>(accepted) : 0.0;
    if (rep.skip_rate > 0.5) {
        rep.high_skip_warning = true;
        std::fprintf(stderr,
                     "warning: gradcheck %s/%s skipped %.0f%% of samples; margin likely too wide\n",
                     rep.family.c_str(), rep.transform.c_str(), 100.0 * rep.skip_rate);
    }
    return rep;
}

std::string contraction_json(const ContractionReport& r) {
    nlohmann::json j;
    j["family"] = r.family;
    j["slope"] = r.slope;
    j["etas"] = r.etas;
    j["mean_residuals"] = r.mean_residuals;
    j["trials"] = r.trials;
    return j.dump();
}

ContractionReport contraction_experiment(const RadiusSpec& spec, const std::vector<double>& etas,
                                         long trials, uint64_t seed) {
    validate_radius_spec(spec);
    if (etas.empty()) throw DomainError("contraction needs at least one eta");
    for (size_t i = 0; i + 1 < etas.size(); ++i)
        if (!(etas[i] > etas[i + 1])) throw DomainError("etas must be strictly decreasing");
    if (etas.back() < 0) throw DomainError("etas must be nonnegative");
    long positive = 0;
    for (double e : etas)
        if (e > 0) ++positive;
    if (positive < 2) throw DomainError("need at least two positive etas to fit a slope");
    if (trials < 1) throw DomainError("trials must be at least 1");

    ContractionReport rep;
    rep.family = family_name(spec.family);
    rep.etas = etas;
    rep.trials = trials;
    rep.mean_residuals.assign(etas.size(), 0.0);

    Rng rng(seed ^ 0x5DEECE66Dull);
    const long d = 4;
    for (long t = 0; t < trials; ++t) {
        std::vector<double> z(static_cast<size_t>(d)), zhat(static_cast<size_t>(d));
        double gap = 0.0;
        do {
            for (auto& x : z) x = rng.normal();
            for (auto& x : zhat) x = rng.normal();
            gap = 0.0;
            for (long j = 0; j < d; ++j) {
                const double diff = zhat[static_cast<size_t>(j)] - z[static_cast<size_t>(j)];
                gap += diff * diff;
            }
            gap = std::sqrt(gap);
        } while (gap < 0.5 || gap > 3.0);
        Assignment asg;
        asg.index = 0;
        asg.zhat = zhat;
        asg.gap = gap;
        asg.direction.resize(static_cast<size_t>(d));
        asg.residual.resize(static_cast<size_t>(d));
        for (long j = 0; j < d; ++j) {
            asg.direction[static_cast<size_t>(j)] =
                (zhat[static_cast<size_t>(j)] - z[static_cast<size_t>(j)]) / gap;
            asg.residual[static_cast<size_t>(j)] =
                z[static_cast<size_t>(j)] - zhat[static_cast<size_t>(j)];
        }
        SurrogateContext ctx = surrogate_forward(z, asg, spec, SurrogateForm::UnitDirection);

        std::vector<double> u(static_cast<size_t>(d));
        double perp2 = 0.0;
        do {
            for (auto& x : u) x = rng.normal();
            double along = 0.0;
            for (long j = 0; j < d; ++j)
                along += u[static_cast<size_t>(j)] * asg.direction[static_cast<size_t>(j)];
            perp2 = 0.0;
            for (long j = 0; j < d; ++j) {
                const double pj = u[static_cast<size_t>(j)] -
                                  along * asg.direction[static_cast<size_t>(j)];
                perp2 += pj * pj;
            }
        } while (perp2 < 1e-4);

        SurrogateGrad bw = surrogate_backward(ctx, u);
        const double rho_p = ctx.radius.rho_prime;
        for (size_t e = 0; e < etas.size(); ++e) {
            const double eta = etas[e];
            double dp2 = 0.0;
            for (long j = 0; j < d; ++j) {
                const double znew = z[static_cast<size_t>(j)] - eta * bw.grad_z[static_cast<size_t>(j)];
                const double diff = zhat[static_cast<size_t>(j)] - znew;
                dp2 += diff * diff;
            }
            const double predicted = gap + eta * (1.0 - rho_p) * bw.a;
            rep.mean_residuals[e] += std::abs(std::sqrt(dp2) - predicted) / trials;
        }
    }

    // least-squares slope of log residual against log eta, positive etas only
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long n = 0;
    for (size_t e = 0; e < etas.size(); ++e) {
        if (!(etas[e] > 0)) continue;
        const double x = std::log(etas[e]);
        const double y = std::log(std::max(rep.mean_residuals[e], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += y * x;
        ++n;
    }
    rep.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return rep;
}

}  // namespace gritvq
