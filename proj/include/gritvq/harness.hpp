#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gritvq/training.hpp"

namespace gritvq {

enum class TaskKind { GMMDirect, LinearAE };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct GmmSpec {
    Mat means;                    // components x data dim
    std::vector<double> weights;  // sums to 1 within 1e-12
    double cov_scale = 1.0;
};

struct SyntheticTask {
    TaskKind kind = TaskKind::GMMDirect;
    GmmSpec gmm;
    long D = 0;  // ambient dim, LinearAE only
    long d = 1;  // latent dim
    long n_train = 4096;
    long n_eval = 4096;
    uint64_t seed = 0;
};

void validate_task(const SyntheticTask& task);

// n i.i.d. mixture samples, one per row; reproducible per rng state.
Mat gen_gmm(const SyntheticTask& task, long n, Rng& rng);

// The fresh eval sample every consumer agrees on: n_eval points drawn from a
// stream derived from the task seed, independent of the training stream.
Mat gen_eval_set(const SyntheticTask& task);

struct ExperimentConfig {
    SyntheticTask task;
    Method method = Method::GRIT;
    RadiusSpec radius;        // GRIT only
    TransformSpec transform;  // GRIT only; baselines run Identity
    SurrogateForm form = SurrogateForm::UnitDirection;
    TrainConfig train;
    long K = 64;
    std::string init = "kmeans";  // kmeans | gaussian | clustered
    long log_every = 50;
    double lr_ae = 1e-3;  // encoder/decoder learning rate, LinearAE only
    std::string out_path;  // run directory; empty = in-memory only
};

void validate_experiment_config(const ExperimentConfig& cfg);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct RunResult {
    double quant_mse = 0.0;
    double recon_mse = 0.0;  // LinearAE only
    double utilization = 0.0;
    double dead_rate = 0.0;
    double entropy = 0.0;
    std::vector<std::string> series;  // one metrics row per log_every steps
    long steps_run = 0;
    double init_seconds = 0.0, train_seconds = 0.0, eval_seconds = 0.0;
};

nlohmann::json run_result_to_json(const RunResult& r);

// Decoder forward plus the analytic pieces the autoencoder path needs: the
// surrogate-fed reconstruction, its loss, the gradient flowing back into the
// quantizer, and the decoder gradient.
struct AeForward {
    Mat zq;        // decoder input, B x d
    Mat xhat;      // B x D
    Mat upstream;  // dL/dzq
    Mat grad_Wd;
    double loss = 0.0;
};

AeForward linear_ae_forward(const Mat& X, const Mat& Z, const Mat& W_d,
                            const std::vector<Assignment>& asg, const RadiusSpec& rs,
                            SurrogateForm form, bool surrogate);

// Full training run: init, train loop with metric logging, eval, and (when
// out_path is set) config.json / codebook.json / metrics.csv / result.json.
// Non-finite losses or gradients propagate as NanAbort with the step index.
RunResult run_experiment(const ExperimentConfig& cfg);

struct Comparison {
    std::vector<std::string> methods;  // one label per config
    std::vector<std::string> metrics;
    std::vector<std::vector<std::vector<double>>> values;  // [method][metric][seed]
    std::vector<std::vector<double>> mean, stddev;         // [method][metric]
    std::vector<std::vector<std::vector<double>>> diff_vs_first;
    long repeats = 0;
};

// Runs every config over `repeats` paired seeds (seed offsets applied to both
// the task and training streams) and aggregates the final eval metrics.
Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs, long repeats);
std::string comparison_csv(const Comparison& c);
nlohmann::json comparison_json(const Comparison& c);

struct BenchRow {
    long K = 0;
    double min_seconds = 0.0, mean_seconds = 0.0, stddev_seconds = 0.0;
    long inner_reps = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    double fit_intercept = 0.0, fit_slope = 0.0;  // least squares, seconds vs K
    std::vector<double> doubling_ratios;          // consecutive min-time ratios
};

// Times apply_transform per codebook size with an inner-repeat window of at
// least ~10ms and min-of-`repeats` aggregation.
BenchReport bench_transform_scaling(const std::vector<long>& ks, long d, long r, long repeats,
                                    uint64_t seed = 0);
nlohmann::json bench_json(const BenchReport& b);

// Collapse-prone preset: a heavy seven-mode ring plus one rare outlier mode,
// with the whole codebook initialized in a tight ball around the outlier.
ExperimentConfig collapse_preset(Method method, uint64_t seed);

}  // namespace gritvq
