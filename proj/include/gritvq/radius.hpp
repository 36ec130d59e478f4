#pragma once

#include <span>
#include <string>
#include <vector>

#include "gritvq/mat.hpp"

namespace gritvq {

enum class RadiusFamily {
    Euclidean,
    Clipped,
    Power,
    Huber,
    Mahalanobis,
    SoftClip,
    PseudoHuber,
    PNorm,
    Temperature,
    AdaptiveMahalanobis,
};

const char* family_name(RadiusFamily f);
RadiusFamily family_from_name(const std::string& name);

struct RadiusSpec {
    RadiusFamily family = RadiusFamily::Euclidean;
    double tau = 1.0;      // cap for Clipped / SoftClip
    double alpha = 1.0;    // Power exponent
    double delta_h = 1.0;  // Huber / PseudoHuber knee
    double p = 2.0;        // PNorm exponent
    double eps_p = 1e-8;   // PNorm smooth-abs epsilon
    double temp = 1.0;     // Temperature scale
    Mat precision;         // Mahalanobis metric, d x d symmetric PSD
    double ema_beta = 0.1; // AdaptiveMahalanobis blend rate
};

// Throws DomainError on out-of-domain hyperparameters; `dim` validates the
// precision matrix shape for the Mahalanobis families (pass 0 to skip).
void validate_radius_spec(const RadiusSpec& spec, long dim = 0);

struct RadiusEval {
    double value = 0.0;      // r
    double rho_prime = 0.0;  // directional derivative of r along s = d/gap
    std::vector<double> grad_z;
    std::vector<double> grad_zhat;
    double gap = 0.0;        // Euclidean gap, all families
};

RadiusEval eval_radius(const RadiusSpec& spec, std::span<const double> zhat,
                       std::span<const double> z);

// Supremum of rho_prime over positive gaps; +inf when unbounded.
double rho_prime_bound(const RadiusSpec& spec);

// EMA blend of `current` toward the ridge-regularized inverse sample
// covariance of `residuals` (rows). Result is symmetric PSD.
Mat update_adaptive_precision(const Mat& current, const Mat& residuals, double beta);

}  // namespace gritvq
