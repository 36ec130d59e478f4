#include "gritvq/radius.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "gritvq/json_io.hpp"
#include "gritvq/numerics.hpp"
#include "gritvq/serialize.hpp"

namespace gritvq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct FamilyName {
    RadiusFamily family;
    const char* name;
};

constexpr FamilyName kFamilies[] = {
    {RadiusFamily::Euclidean, "euclidean"},
    {RadiusFamily::Clipped, "clipped"},
    {RadiusFamily::Power, "power"},
    {RadiusFamily::Huber, "huber"},
    {RadiusFamily::Mahalanobis, "mahalanobis"},
    {RadiusFamily::SoftClip, "softclip"},
    {RadiusFamily::PseudoHuber, "pseudohuber"},
    {RadiusFamily::PNorm, "pnorm"},
    {RadiusFamily::Temperature, "temperature"},
    {RadiusFamily::AdaptiveMahalanobis, "adaptive_mahalanobis"},
};

bool uses_precision(RadiusFamily f) {
    return f == RadiusFamily::Mahalanobis || f == RadiusFamily::AdaptiveMahalanobis;
}

void check_symmetric(const Mat& a) {
    for (long i = 0; i < a.rows; ++i)
        for (long j = i + 1; j < a.cols; ++j) {
            const double tol = 1e-10 * std::max({1.0, std::abs(a(i, j)), std::abs(a(j, i))});
            if (std::abs(a(i, j) - a(j, i)) > tol)
                throw DomainError("precision matrix is not symmetric");
        }
}

// Cholesky factor of a symmetric matrix, or nullopt when a pivot goes
// nonpositive (matrix not positive definite to working precision).
std::optional<Mat> cholesky(const Mat& a) {
    const long n = a.rows;
    Mat l(n, n);
    for (long j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (long k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) return std::nullopt;
        l(j, j) = std::sqrt(diag);
        for (long i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (long k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

// Inverse from the Cholesky factor: solve L Lᵀ X = I column by column.
Mat cholesky_inverse(const Mat& l) {
    const long n = l.rows;
    Mat inv(n, n);
    std::vector<double> y(static_cast<size_t>(n));
    for (long col = 0; col < n; ++col) {
        for (long i = 0; i < n; ++i) {
            double s = (i == col) ? 1.0 : 0.0;
            for (long k = 0; k < i; ++k) s -= l(i, k) * y[static_cast<size_t>(k)];
            y[static_cast<size_t>(i)] = s / l(i, i);
        }
        for (long i = n - 1; i >= 0; --i) {
            double s = y[static_cast<size_t>(i)];
            for (long k = i + 1; k < n; ++k) s -= l(k, i) * inv(k, col);
            inv(i, col) = s / l(i, i);
        }
    }
    return inv;
}

double min_eig_estimate(const Mat& a) {
    const double sigma = spectral_norm(a, 200, 1e-12);
    if (sigma == 0.0) return 0.0;
    Mat shifted(a.rows, a.cols);
    for (long i = 0; i < a.rows; ++i)
        for (long j = 0; j < a.cols; ++j) shifted(i, j) = (i == j ? sigma : 0.0) - a(i, j);
    return sigma - spectral_norm(shifted, 200, 1e-12);
}

}  // namespace

const char* family_name(RadiusFamily f) {
    for (const auto& e : kFamilies)
        if (e.family == f) return e.name;
    throw DomainError("unknown radius family id");
}

RadiusFamily family_from_name(const std::string& name) {
    for (const auto& e : kFamilies)
        if (name == e.name) return e.family;
    throw DomainError("unknown radius family '" + name + "'");
}

void validate_radius_spec(const RadiusSpec& spec, long dim) {
    switch (spec.family) {
        case RadiusFamily::Clipped:
        case RadiusFamily::SoftClip:
            if (!(spec.tau > 0.0)) throw DomainError("tau must be > 0");
            break;
        case RadiusFamily::Power:
            if (!(spec.alpha > 0.0)) throw DomainError("alpha must be > 0");
            break;
        case RadiusFamily::Huber:
        case RadiusFamily::PseudoHuber:
            if (!(spec.delta_h > 0.0)) throw DomainError("delta_h must be > 0");
            break;
        case RadiusFamily::PNorm:
            if (!(spec.p >= 1.0)) throw DomainError("p must be >= 1");
            if (!(spec.eps_p > 0.0)) throw DomainError("eps_p must be > 0");
            break;
        case RadiusFamily::Temperature:
            if (!(spec.temp > 0.0)) throw DomainError("temp must be > 0");
            break;
        case RadiusFamily::AdaptiveMahalanobis:
            if (!(spec.ema_beta > 0.0 && spec.ema_beta <= 1.0))
                throw DomainError("ema_beta must lie in (0,1]");
            [[fallthrough]];
        case RadiusFamily::Mahalanobis: {
            const Mat& a = spec.precision;
            if (a.rows != a.cols || a.rows < 1)
                throw DomainError("precision matrix must be square and nonempty");
            if (dim > 0 && a.rows != dim) throw ShapeError("precision matrix does not match dimension");
            check_symmetric(a);
            if (min_eig_estimate(a) < -1e-8) throw DomainError("precision matrix is not PSD");
            break;
        }
        case RadiusFamily::Euclidean:
            break;
    }
}

RadiusEval eval_radius(const RadiusSpec& spec, std::span<const double> zhat,
                       std::span<const double> z) {
    if (zhat.size() != z.size()) throw ShapeError("eval_radius: zhat and z dimensions differ");
    const long d = static_cast<long>(z.size());

    RadiusEval out;
    out.grad_z.assign(static_cast<size_t>(d), 0.0);
    out.grad_zhat.assign(static_cast<size_t>(d), 0.0);

    std::vector<double> diff(static_cast<size_t>(d));
    double rho_sq = 0.0;
    for (long i = 0; i < d; ++i) {
        diff[static_cast<size_t>(i)] = zhat[static_cast<size_t>(i)] - z[static_cast<size_t>(i)];
        rho_sq += diff[static_cast<size_t>(i)] * diff[static_cast<size_t>(i)];
    }
    const double rho = std::sqrt(rho_sq);
    out.gap = rho;
    if (rho == 0.0) return out;  // value 0, gradients pinned to zero at the origin

    // Radial families share value = phi(rho) and grad_zhat = phi'(rho) d/rho.
    double phi = 0.0, phi_prime = 0.0;
    bool radial = true;
    switch (spec.family) {
        case RadiusFamily::Euclidean:
            phi = rho;
            phi_prime = 1.0;
            break;
        case RadiusFamily::Clipped:
            if (rho <= spec.tau) {
                phi = rho;
                phi_prime = 1.0;  // inner side wins at the knee
            } else {
                phi = spec.tau;
                phi_prime = 0.0;
            }
            break;
        case RadiusFamily::Power:
            phi = std::pow(rho, spec.alpha);
            phi_prime = spec.alpha * std::pow(rho, spec.alpha - 1.0);
            break;
        case RadiusFamily::Huber:
            if (rho <= spec.delta_h) {
                phi = 0.5 * rho_sq / spec.delta_h;
                phi_prime = rho / spec.delta_h;
            } else {
                phi = rho - 0.5 * spec.delta_h;
                phi_prime = 1.0;
            }
            break;
        case RadiusFamily::SoftClip: {
            const double t = std::tanh(rho / spec.tau);
            phi = spec.tau * t;
            phi_prime = 1.0 - t * t;
            break;
        }
        case RadiusFamily::PseudoHuber: {
            const double root = std::sqrt(spec.delta_h * spec.delta_h + rho_sq);
            phi = root - spec.delta_h;
            phi_prime = rho / root;
            break;
        }
        case RadiusFamily::Temperature:
            phi = spec.temp * std::log1p(rho / spec.temp);
            phi_prime = spec.temp / (spec.temp + rho);
            break;
        case RadiusFamily::Mahalanobis:
        case RadiusFamily::AdaptiveMahalanobis: {
            radial = false;
            const Mat& a = spec.precision;
            if (a.rows != d || a.cols != d)
                throw ShapeError("eval_radius: precision matrix does not match dimension");
            check_symmetric(a);
            std::vector<double> ad(static_cast<size_t>(d), 0.0);
            double quad = 0.0;
            for (long i = 0; i < d; ++i) {
                double s = 0.0;
                for (long j = 0; j < d; ++j) s += a(i, j) * diff[static_cast<size_t>(j)];
                ad[static_cast<size_t>(i)] = s;
                quad += s * diff[static_cast<size_t>(i)];
            }
            if (quad < -1e-12 * rho_sq) throw DomainError("precision matrix is not PSD");
            const double r_a = std::sqrt(std::max(0.0, quad));
            out.value = r_a;
            if (r_a > 0.0) {
                for (long i = 0; i < d; ++i) {
                    out.grad_zhat[static_cast<size_t>(i)] = ad[static_cast<size_t>(i)] / r_a;
                    out.grad_z[static_cast<size_t>(i)] = -out.grad_zhat[static_cast<size_t>(i)];
                }
                out.rho_prime = r_a / rho;  // = <grad_zhat, d/rho> by homogeneity
            }
            break;
        }
        case RadiusFamily::PNorm: {
            radial = false;
            // Shifted smooth abs m(x) = sqrt(x²+ε²) − ε keeps r(0) = 0 exactly.
            const double eps = spec.eps_p;
            double sum = 0.0;
            std::vector<double> m(static_cast<size_t>(d)), mprime(static_cast<size_t>(d));
            for (long i = 0; i < d; ++i) {
                const double x = diff[static_cast<size_t>(i)];
                const double root = std::sqrt(x * x + eps * eps);
                m[static_cast<size_t>(i)] = root - eps;
                mprime[static_cast<size_t>(i)] = x / root;
                sum += std::pow(m[static_cast<size_t>(i)], spec.p);
            }
            const double r = std::pow(sum, 1.0 / spec.p);
            out.value = r;
            if (sum > 0.0) {
                const double outer = std::pow(sum, 1.0 / spec.p - 1.0);
                double along = 0.0;
                for (long i = 0; i < d; ++i) {
                    const double g = outer * std::pow(m[static_cast<size_t>(i)], spec.p - 1.0) *
                                     mprime[static_cast<size_t>(i)];
                    out.grad_zhat[static_cast<size_t>(i)] = g;
                    out.grad_z[static_cast<size_t>(i)] = -g;
                    along += g * diff[static_cast<size_t>(i)];
                }
                out.rho_prime = along / rho;
            }
            break;
        }
    }

    if (radial) {
        out.value = phi;
        out.rho_prime = phi_prime;
        for (long i = 0; i < d; ++i) {
            out.grad_zhat[static_cast<size_t>(i)] = phi_prime * diff[static_cast<size_t>(i)] / rho;
            out.grad_z[static_cast<size_t>(i)] = -out.grad_zhat[static_cast<size_t>(i)];
        }
    }
    return out;
}

double rho_prime_bound(const RadiusSpec& spec) {
    switch (spec.family) {
        case RadiusFamily::Euclidean:
        case RadiusFamily::Clipped:
        case RadiusFamily::Huber:
        case RadiusFamily::SoftClip:
        case RadiusFamily::PseudoHuber:
        case RadiusFamily::Temperature:
            return 1.0;
        case RadiusFamily::Power:
            // alpha < 1 blows up at 0, alpha > 1 at infinity.
            return spec.alpha == 1.0 ? 1.0 : kInf;
        case RadiusFamily::PNorm:
            // For p >= 2 the dual-norm ratio is capped at 1; below 2 the
            // axis-aligned directions push it to d^{1/p-1/2} with no fixed cap.
            return spec.p >= 2.0 ? 1.0 : kInf;
        case RadiusFamily::Mahalanobis:
        case RadiusFamily::AdaptiveMahalanobis:
            return std::sqrt(spectral_norm(spec.precision, 200, 1e-12));
    }
    throw DomainError("unknown radius family id");
}

Mat update_adaptive_precision(const Mat& current, const Mat& residuals, double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("ema beta must lie in (0,1]");
    const long n = residuals.rows;
    const long d = residuals.cols;
    if (current.rows != d || current.cols != d)
        throw ShapeError("update_adaptive_precision: precision does not match residual dimension");
    if (n < 1) throw DomainError("update_adaptive_precision: no residuals");

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += residuals(i, j);
    for (auto& m : mean) m /= static_cast<double>(n);

    // Mean-centered covariance, divisor n; off-diagonals dropped when the
    // sample is too small to be invertible anyway.
    const bool diagonal_only = n < d + 1;
    Mat cov(d, d);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) {
            const double xj = residuals(i, j) - mean[static_cast<size_t>(j)];
            if (diagonal_only) {
                cov(j, j) += xj * xj;
            } else {
                for (long k = j; k < d; ++k) {
                    const double xk = residuals(i, k) - mean[static_cast<size_t>(k)];
                    cov(j, k) += xj * xk;
                }
            }
        }
    for (long j = 0; j < d; ++j)
        for (long k = j; k < d; ++k) {
            cov(j, k) /= static_cast<double>(n);
            cov(k, j) = cov(j, k);
        }

    auto l = cholesky(cov);
    double ridge = 1e-6;
    while (!l && ridge < 1e3) {
        Mat cushioned = cov;
        for (long j = 0; j < d; ++j) cushioned(j, j) += ridge;
        l = cholesky(cushioned);
        ridge *= 100.0;
    }
    if (!l) throw DomainError("update_adaptive_precision: covariance could not be regularized");
    Mat inv = cholesky_inverse(*l);

    Mat out(d, d);
    for (long i = 0; i < d; ++i)
        for (long j = 0; j < d; ++j) out(i, j) = (1.0 - beta) * current(i, j) + beta * inv(i, j);
    for (long i = 0; i < d; ++i)
        for (long j = i + 1; j < d; ++j) {
            const double avg = 0.5 * (out(i, j) + out(j, i));
            out(i, j) = avg;
            out(j, i) = avg;
        }
    return out;
}

namespace {

// Parameter keys each family understands; anything else in "params" is an error.
std::vector<std::string> family_param_keys(RadiusFamily f) {
    switch (f) {
        case RadiusFamily::Euclidean: return {};
        case RadiusFamily::Clipped:
        case RadiusFamily::SoftClip: return {"tau"};
        case RadiusFamily::Power: return {"alpha"};
        case RadiusFamily::Huber:
        case RadiusFamily::PseudoHuber: return {"delta_h"};
        case RadiusFamily::Mahalanobis: return {"precision"};
        case RadiusFamily::PNorm: return {"p", "eps_p"};
        case RadiusFamily::Temperature: return {"temp"};
        case RadiusFamily::AdaptiveMahalanobis: return {"precision", "ema_beta"};
    }
    throw DomainError("unknown radius family id");
}

}  // namespace

nlohmann::json radius_spec_to_json(const RadiusSpec& spec) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& key : family_param_keys(spec.family)) {
        if (key == "tau") params["tau"] = spec.tau;
        else if (key == "alpha") params["alpha"] = spec.alpha;
        else if (key == "delta_h") params["delta_h"] = spec.delta_h;
        else if (key == "p") params["p"] = spec.p;
        else if (key == "eps_p") params["eps_p"] = spec.eps_p;
        else if (key == "temp") params["temp"] = spec.temp;
        else if (key == "ema_beta") params["ema_beta"] = spec.ema_beta;
        else if (key == "precision") params["precision"] = mat_to_json(spec.precision);
    }
    nlohmann::json j;
    j["family"] = family_name(spec.family);
    j["params"] = params;
    return j;
}

RadiusSpec radius_spec_from_json(const nlohmann::json& j) {
    for (const auto& [key, _] : j.items())
        if (key != "family" && key != "params")
            throw DomainError("radius spec: unknown field '" + key + "'");
    if (!j.contains("family")) throw DomainError("radius spec: missing family");
    RadiusSpec spec;
    spec.family = family_from_name(j.at("family").get<std::string>());
    const auto keys = family_param_keys(spec.family);
    const nlohmann::json params = j.value("params", nlohmann::json::object());
    for (const auto& [key, val] : params.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw DomainError("radius spec: unknown parameter '" + key + "' for family " +
                              family_name(spec.family));
        if (key == "tau") spec.tau = val.get<double>();
        else if (key == "alpha") spec.alpha = val.get<double>();
        else if (key == "delta_h") spec.delta_h = val.get<double>();
        else if (key == "p") spec.p = val.get<double>();
        else if (key == "eps_p") spec.eps_p = val.get<double>();
        else if (key == "temp") spec.temp = val.get<double>();
        else if (key == "ema_beta") spec.ema_beta = val.get<double>();
        else if (key == "precision") spec.precision = mat_from_json(val);
    }
    validate_radius_spec(spec);
    return spec;
}

}  // namespace gritvq
