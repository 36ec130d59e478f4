#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gritvq/codebook.hpp"
#include "gritvq/quantizer.hpp"
#include "gritvq/radius.hpp"

namespace gritvq {

struct FDConfig {
    double h = 1e-5;                     // central-difference step
    double boundary_margin = 1e-3;       // min best-vs-second-best gap difference
    long trials = 200;                   // accepted trials per (family, transform)
    std::vector<long> dims = {2, 8, 32};
    std::vector<long> ks = {4, 64};
    double tolerance = 1e-6;
    long param_probes = 8;  // FD-probed entries per parameter matrix (0 = skip params)
    uint64_t seed = 0;
};

void validate_fd_config(const FDConfig& cfg);

// Central differences per coordinate. A NaN probe raises an error naming the
// offending coordinate.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                const std::vector<double>& x, double h);

struct GradCheckReport {
    std::string family;
    std::string transform;
    double max_rel_err = 0.0;        // encoder gradient, worst coordinate over all trials
    double mean_rel_err = 0.0;       // mean over trials of the per-trial worst coordinate
    double param_max_rel_err = 0.0;  // transform/codebook parameter entries
    double skip_rate = 0.0;
    long trials = 0;  // accepted (boundary-filtered) trials
    bool high_skip_warning = false;
};

std::string report_json(const GradCheckReport& r);

// Random-but-safe hyperparameters per family / kind, away from kinks and
// degeneracies so finite differences stay meaningful.
RadiusSpec sample_radius_spec(RadiusFamily family, long d, Rng& rng);
TransformSpec sample_transform_spec(TransformKind kind, long K, long d, Rng& rng);

// Samples random (E, transform, radius, z) pipelines, filters samples too
// close to an assignment boundary (margin or +-h index flips), then compares
// the analytic encoder gradient and parameter gradients against central
// differences of the pipeline loss with stop-gradient contents held frozen.
GradCheckReport check_pipeline_gradients(RadiusFamily family, TransformKind kind,
                                         const FDConfig& cfg);

struct ContractionReport {
    std::string family;
    double slope = 0.0;  // log-residual vs log-eta least-squares slope
    std::vector<double> etas;
    std::vector<double> mean_residuals;
    long trials = 0;
};

std::string contraction_json(const ContractionReport& r);

// Takes gradient steps of size eta and measures how fast the gap prediction
// delta + eta (1 - rho') a degrades; the residual should shrink as eta^2.
ContractionReport contraction_experiment(const RadiusSpec& spec, const std::vector<double>& etas,
                                         long trials, uint64_t seed = 0);

}  // namespace gritvq
