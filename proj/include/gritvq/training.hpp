#pragma once

#include <string>
#include <vector>

#include "gritvq/codebook.hpp"
#include "gritvq/quantizer.hpp"
#include "gritvq/radius.hpp"

namespace gritvq {

enum class Protocol { FrozenE, JointDirect, JointEMA };
enum class Method { GRIT, STE, EMAVQ };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);
const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
    Protocol protocol = Protocol::FrozenE;
    double lr_M = 1e-3;
    double lr_W = 2e-3;
    double lr_E = 3e-4;
    double weight_decay_M = 1e-4;
    double tau_w = 1.75;
    long cache_T = 8;
    double lambda_u = 3e-4;
    double tau_u = 0.0;  // 0 resolves to 1/(2K) once K is known
    double ema_momentum = 0.97;
    long t_ema = 4;
    long t_scan = 1000;
    double tau_dead = 0.005;
    long steps = 1000;
    long batch = 256;
    uint64_t seed = 0;
    double grad_clip = 10.0;  // Frobenius cap per gradient group
};

// Rates may be zero (documented no-op case) but never negative; counts are
// positive. ema_momentum outside [0.95, 0.99] gets a stderr warning only.
void validate_train_config(const TrainConfig& cfg);

struct UsageStats {
    std::vector<double> activation_rate;  // exponentially windowed p-hat
    double utilization = 0.0;             // distinct codes in the recent window / K
    double dead_rate = 0.0;
    double entropy = 0.0;  // nats, from the window histogram
    double row_norm_min = 0.0, row_norm_max = 0.0;
    double sigma_w = 0.0;
    double grad_norm_W = 0.0, grad_norm_M = 0.0, grad_norm_E = 0.0;
    double drift = 0.0;
};

// Window-histogram part of the stats (utilization, dead rate, entropy).
UsageStats compute_stats(const std::vector<long>& window, long K);

struct OptState {
    Mat m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Bias-corrected adaptive-moment step with decoupled weight decay.
void adam_update(OptState& opt, Mat& param, const Mat& grad, double lr, double weight_decay);

// Hinge penalty on under-used codes. Returns the loss and its subgradient
// with respect to the rates (zero exactly at the kink).
std::pair<double, std::vector<double>> usage_regularizer(const std::vector<double>& rates,
                                                         double lambda_u, double tau_u);

// Rows whose rate is below tau_dead are re-seeded from the reservoir plus
// jitter of scale 1e-3. Empty reservoir with dead codes: warn and skip.
long dead_code_reset(Mat& E, const std::vector<double>& rates, double tau_dead,
                     const Mat& reservoir, Rng& rng);

struct StepResult {
    double loss = 0.0;
    UsageStats stats;
    long reset_count = 0;
    bool cache_refreshed = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(long step, double loss, const UsageStats& s);
std::string metrics_jsonl_row(long step, double loss, const UsageStats& s);

// One training step owns: cache refresh on schedule, batch assignment,
// surrogate forward/backward, transform and codebook updates per protocol,
// gauge clipping, stats, and scheduled dead-code resets. Non-finite loss or
// gradients raise NanAbort before any state mutates.
class Trainer {
  public:
    Trainer(CodebookState cb, TransformSpec tf, RadiusSpec rs, SurrogateForm form, Method method,
            TrainConfig cfg);

    // Refreshes the cache if due, then assigns the batch (steps 2-3).
    std::vector<Assignment> assign_batch(const Mat& latents);

    // Steps 4-10 with caller-supplied upstream gradients and loss value; used
    // when an outer model (decoder) owns the loss. grad_latents, when given,
    // receives dL/dz per sample.
    StepResult apply_gradients(const Mat& latents, const std::vector<Assignment>& assignments,
                               const Mat& upstream, double loss, Mat* grad_latents = nullptr);

    // Full step with the built-in quantization loss mean |zhat - z|^2.
    StepResult step(const Mat& latents);

    const CodebookState& codebook() const { return cb_; }
    const TransformSpec& transform() const { return tf_; }
    const RadiusSpec& radius() const { return rs_; }
    const TransformedCache& cache() const { return cache_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<double>& activation_rate() const { return phat_; }
    Method method() const { return method_; }
    long step_count() const { return step_; }

  private:
    void refresh_if_due();
    void note_latents(const Mat& latents);

    CodebookState cb_;
    TransformSpec tf_;
    RadiusSpec rs_;
    SurrogateForm form_;
    Method method_;
    TrainConfig cfg_;
    TransformedCache cache_;
    bool cache_valid_ = false;
    long last_refresh_step_ = -1;
    OptState opt_a_, opt_b_, opt_w_, opt_e_;
    std::vector<double> phat_;
    std::vector<long> window_;
    size_t window_pos_ = 0;
    Mat reservoir_;
    long reservoir_fill_ = 0;
    size_t reservoir_pos_ = 0;
    Rng rng_;
    long step_ = 0;
};

}  // namespace gritvq
