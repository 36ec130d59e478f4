#include "gritvq/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <json.hpp>

#include "gritvq/numerics.hpp"
#include "gritvq/serialize.hpp"

namespace gritvq {

namespace {

constexpr size_t kWindowCap = 4096;   // recent assignments kept for utilization/entropy
constexpr size_t kReservoirCap = 1024;  // recent latents kept for dead-code reseeding
constexpr double kRateDecay = 0.99;   // exponential window for the activation rates

bool all_finite(const Mat& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::FrozenE: return "frozen_e";
        case Protocol::JointDirect: return "joint_direct";
        case Protocol::JointEMA: return "joint_ema";
    }
    throw DomainError("unknown protocol id");
}

Protocol protocol_from_name(const std::string& name) {
    if (name == "frozen_e") return Protocol::FrozenE;
    if (name == "joint_direct") return Protocol::JointDirect;
    if (name == "joint_ema") return Protocol::JointEMA;
    throw DomainError("unknown protocol '" + name + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::GRIT: return "grit";
        case Method::STE: return "ste";
        case Method::EMAVQ: return "ema_vq";
    }
    throw DomainError("unknown method id");
}

Method method_from_name(const std::string& name) {
    if (name == "grit") return Method::GRIT;
    if (name == "ste") return Method::STE;
    if (name == "ema_vq") return Method::EMAVQ;
    throw DomainError("unknown method '" + name + "'");
}

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lr_M < 0 || cfg.lr_W < 0 || cfg.lr_E < 0)
        throw DomainError("learning rates must be nonnegative");
    if (cfg.weight_decay_M < 0) throw DomainError("weight decay must be nonnegative");
    if (!(cfg.tau_w > 0)) throw DomainError("tau_w must be positive");
    if (cfg.cache_T < 1) throw DomainError("cache interval must be at least 1");
    if (cfg.lambda_u < 0) throw DomainError("lambda_u must be nonnegative");
    if (cfg.tau_u < 0) throw DomainError("tau_u must be nonnegative");
    if (!(cfg.ema_momentum >= 0 && cfg.ema_momentum < 1))
        throw DomainError("ema_momentum must lie in [0, 1)");
    if (cfg.ema_momentum < 0.95 || cfg.ema_momentum > 0.99)
        std::fprintf(stderr, "warning: ema_momentum %g outside the usual [0.95, 0.99] band\n",
                     cfg.ema_momentum);
    if (cfg.t_ema < 1) throw DomainError("t_ema must be at least 1");
    if (cfg.t_scan < 1) throw DomainError("t_scan must be at least 1");
    if (cfg.tau_dead < 0) throw DomainError("tau_dead must be nonnegative");
    if (cfg.steps < 0) throw DomainError("steps must be nonnegative");
    if (cfg.batch < 1) throw DomainError("batch must be at least 1");
    if (!(cfg.grad_clip > 0)) throw DomainError("grad_clip must be positive");
}

UsageStats compute_stats(const std::vector<long>& window, long K) {
    if (window.empty()) throw DomainError("compute_stats: empty window");
    UsageStats s;
    std::vector<long> hist(static_cast<size_t>(K), 0);
    for (long idx : window) {
        if (idx < 0 || idx >= K) throw DomainError("compute_stats: index out of range");
        ++hist[static_cast<size_t>(idx)];
    }
    long distinct = 0;
    double entropy = 0.0;
    const double n = static_cast<double>(window.size());
    for (long h : hist) {
        if (h == 0) continue;
        ++distinct;
        const double p = static_cast<double>(h) / n;
        entropy -= p * std::log(p);
    }
    s.utilization = static_cast<double>(distinct) / static_cast<double>(K);
    s.dead_rate = 1.0 - s.utilization;
    s.entropy = entropy;
    return s;
}

void adam_update(OptState& opt, Mat& param, const Mat& grad, double lr, double weight_decay) {
    if (!param.same_shape(grad)) throw ShapeError("adam_update: gradient shape mismatch");
    if (opt.m.rows == 0) {
        opt.m = Mat(param.rows, param.cols);
        opt.v = Mat(param.rows, param.cols);
    }
    if (!opt.m.same_shape(param)) throw ShapeError("adam_update: moment shape mismatch");
    ++opt.t;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    for (size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i];
        opt.m.data[i] = opt.beta1 * opt.m.data[i] + (1.0 - opt.beta1) * g;
        opt.v.data[i] = opt.beta2 * opt.v.data[i] + (1.0 - opt.beta2) * g * g;
        const double mh = opt.m.data[i] / c1;
        const double vh = opt.v.data[i] / c2;
        param.data[i] -= lr * (mh / (std::sqrt(vh) + opt.eps) + weight_decay * param.data[i]);
    }
}

std::pair<double, std::vector<double>> usage_regularizer(const std::vector<double>& rates,
                                                         double lambda_u, double tau_u) {
    double loss = 0.0;
    std::vector<double> grad(rates.size(), 0.0);
    for (size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] < 0.0 || rates[i] > 1.0)
            throw DomainError("usage_regularizer: rates must lie in [0, 1]");
        if (rates[i] < tau_u) {
            loss += lambda_u * (tau_u - rates[i]);
            grad[i] = -lambda_u;
        }
    }
    return {loss, std::move(grad)};
}

long dead_code_reset(Mat& E, const std::vector<double>& rates, double tau_dead,
                     const Mat& reservoir, Rng& rng) {
    if (static_cast<long>(rates.size()) != E.rows)
        throw ShapeError("dead_code_reset: rate vector length mismatch");
    std::vector<long> dead;
    for (long i = 0; i < E.rows; ++i)
        if (rates[static_cast<size_t>(i)] < tau_dead) dead.push_back(i);
    if (dead.empty()) return 0;
    if (reservoir.rows == 0) {
        std::fprintf(stderr, "warning: %zu dead codes but the latent reservoir is empty; skipping reset\n",
                     dead.size());
        return 0;
    }
    if (reservoir.cols != E.cols) throw ShapeError("dead_code_reset: reservoir dimension mismatch");
    for (long i : dead) {
        const long pick = static_cast<long>(rng.below(static_cast<uint64_t>(reservoir.rows)));
        for (long j = 0; j < E.cols; ++j) E(i, j) = reservoir(pick, j) + 1e-3 * rng.normal();
    }
    return static_cast<long>(dead.size());
}

std::string metrics_csv_header() {
    return "step,loss,utilization,dead_rate,entropy,sigma_w,drift,grad_norm_W,grad_norm_M,grad_norm_E";
}

std::string metrics_csv_row(long step, double loss, const UsageStats& s) {
    std::string row = std::to_string(step);
    for (double v : {loss, s.utilization, s.dead_rate, s.entropy, s.sigma_w, s.drift,
                     s.grad_norm_W, s.grad_norm_M, s.grad_norm_E})
        row += "," + fmt17(v);
    return row;
}

std::string metrics_jsonl_row(long step, double loss, const UsageStats& s) {
    nlohmann::json j;
    j["step"] = step;
    j["loss"] = loss;
    j["utilization"] = s.utilization;
    j["dead_rate"] = s.dead_rate;
    j["entropy"] = s.entropy;
    j["sigma_w"] = s.sigma_w;
    j["drift"] = s.drift;
    j["grad_norm_W"] = s.grad_norm_W;
    j["grad_norm_M"] = s.grad_norm_M;
    j["grad_norm_E"] = s.grad_norm_E;
    return j.dump();
}

Trainer::Trainer(CodebookState cb, TransformSpec tf, RadiusSpec rs, SurrogateForm form,
                 Method method, TrainConfig cfg)
    : cb_(std::move(cb)),
      tf_(std::move(tf)),
      rs_(std::move(rs)),
      form_(form),
      method_(method),
      cfg_(cfg),
      rng_(cfg.seed ^ 0xC0DEB00C5EEDull) {
    validate_train_config(cfg_);
    validate_transform_spec(tf_, cb_.K, cb_.d);
    validate_radius_spec(rs_, cb_.d);
    if (cfg_.tau_u == 0.0) cfg_.tau_u = 1.0 / (2.0 * static_cast<double>(cb_.K));
    tf_.tau_w = cfg_.tau_w;
    // The baselines pin their own codebook handling: STE never updates E and
    // EMA-VQ always uses the EMA path.
    if (method_ == Method::STE) cfg_.protocol = Protocol::FrozenE;
    if (method_ == Method::EMAVQ) cfg_.protocol = Protocol::JointEMA;
    // Enforce the spectral cap from step 0 so it holds unconditionally.
    if (tf_.W.rows) tf_.W = spectral_clip(tf_.W, cfg_.tau_w);
    phat_.assign(static_cast<size_t>(cb_.K), 1.0 / static_cast<double>(cb_.K));
    reservoir_ = Mat(static_cast<long>(kReservoirCap), cb_.d);
}

void Trainer::refresh_if_due() {
    if (!cache_valid_) {
        cache_ = refresh_cache(cb_, tf_, step_);
        cache_valid_ = true;
        last_refresh_step_ = step_;
        return;
    }
    if (step_ % cfg_.cache_T == 0 && last_refresh_step_ != step_) {
        cache_ = refresh_cache(cb_, tf_, step_, &cache_);
        last_refresh_step_ = step_;
    }
}

void Trainer::note_latents(const Mat& latents) {
    for (long p = 0; p < latents.rows; ++p) {
        long slot;
        if (reservoir_fill_ < static_cast<long>(kReservoirCap)) {
            slot = reservoir_fill_++;
        } else {
            slot = static_cast<long>(reservoir_pos_);
            reservoir_pos_ = (reservoir_pos_ + 1) % kReservoirCap;
        }
        for (long j = 0; j < latents.cols; ++j) reservoir_(slot, j) = latents(p, j);
    }
}

std::vector<Assignment> Trainer::assign_batch(const Mat& latents) {
    if (latents.cols != cb_.d) throw ShapeError("assign_batch: latent dimension mismatch");
    refresh_if_due();
    auto asg = batch_nn(cache_, latents);
    // The cache amortizes the arg-min only. Between refreshes the routing is
    // allowed to go stale, but the assignment geometry (zhat, gap, direction)
    // is rebuilt against the current parameters so the surrogate pulls toward
    // where the codes actually are.
    if (step_ != cache_.step_stamp) {
        const std::vector<long>* frozen =
            tf_.kind == TransformKind::AttentionTopK ? &cache_.work.topk : nullptr;
        const Mat fresh = apply_transform(tf_, cb_.E, nullptr, frozen);
        const long d = latents.cols;
        for (long p = 0; p < latents.rows; ++p) {
            Assignment& a = asg[static_cast<size_t>(p)];
            const double* row = fresh.row(a.index);
            double g2 = 0.0;
            for (long j = 0; j < d; ++j) {
                const double diff = row[j] - latents(p, j);
                g2 += diff * diff;
            }
            a.gap = std::sqrt(g2);
            for (long j = 0; j < d; ++j) {
                a.zhat[static_cast<size_t>(j)] = row[j];
                a.direction[static_cast<size_t>(j)] =
                    a.gap > 0.0 ? (row[j] - latents(p, j)) / a.gap : 0.0;
                a.residual[static_cast<size_t>(j)] = latents(p, j) - row[j];
            }
        }
    }
    return asg;
}

StepResult Trainer::apply_gradients(const Mat& latents, const std::vector<Assignment>& assignments,
                                    const Mat& upstream, double loss, Mat* grad_latents) {
    const long B = latents.rows, d = latents.cols, K = cb_.K;
    if (static_cast<long>(assignments.size()) != B || !upstream.same_shape(latents) || d != cb_.d)
        throw ShapeError("apply_gradients: batch shape mismatch");
    if (!cache_valid_) throw DomainError("apply_gradients: no active cache; call assign_batch");

    // ---- pure computation phase: nothing mutates until every check passes.
    Mat grad_z(B, d);
    Mat g_codes(K, d);
    if (method_ == Method::GRIT) {
        std::vector<SurrogateContext> ctxs;
        ctxs.reserve(static_cast<size_t>(B));
        for (long p = 0; p < B; ++p)
            ctxs.push_back(surrogate_forward(
                std::span<const double>(latents.row(p), static_cast<size_t>(d)),
                assignments[static_cast<size_t>(p)], rs_, form_));
        for (long p = 0; p < B; ++p) {
            auto bw = surrogate_backward(
                ctxs[static_cast<size_t>(p)],
                std::span<const double>(upstream.row(p), static_cast<size_t>(d)));
            for (long j = 0; j < d; ++j) {
                grad_z(p, j) = bw.grad_z[static_cast<size_t>(j)];
                g_codes(assignments[static_cast<size_t>(p)].index, j) +=
                    bw.code_signal[static_cast<size_t>(j)];
            }
        }
    } else {
        grad_z = upstream;  // straight-through: identity backward, no code signal
    }

    TransformGrads tg;
    const bool want_transform_grads = method_ == Method::GRIT;
    if (want_transform_grads) {
        TransformWork work;
        const std::vector<long>* frozen =
            tf_.kind == TransformKind::AttentionTopK ? &cache_.work.topk : nullptr;
        apply_transform(tf_, cb_.E, &work, frozen);
        tg = transform_backward(g_codes, cb_.E, tf_, work);
    }

    // Usage pressure: violated codes get pulled toward the batch latent mean.
    const bool e_mutable = cfg_.protocol != Protocol::FrozenE;
    std::vector<double> mean_z(static_cast<size_t>(d), 0.0);
    std::vector<long> pulled;
    if (e_mutable && cfg_.lambda_u > 0.0) {
        for (long p = 0; p < B; ++p)
            for (long j = 0; j < d; ++j) mean_z[static_cast<size_t>(j)] += latents(p, j) / B;
        for (long i = 0; i < K; ++i)
            if (phat_[static_cast<size_t>(i)] < cfg_.tau_u) pulled.push_back(i);
    }

    if (!std::isfinite(loss)) throw NanAbort(step_, "non-finite loss at step " + std::to_string(step_));
    for (const Mat* g : {&grad_z, &g_codes, &tg.grad_W, &tg.grad_A, &tg.grad_B, &tg.grad_U1,
                         &tg.grad_V1, &tg.grad_E})
        if (!all_finite(*g))
            throw NanAbort(step_, "non-finite gradient at step " + std::to_string(step_));

    auto clip_group = [&](Mat& g) {
        if (g.rows == 0) return;
        const double n = frobenius(g);
        if (n > cfg_.grad_clip)
            for (auto& x : g.data) x *= cfg_.grad_clip / n;
    };

    UsageStats stats;
    stats.grad_norm_W = tg.grad_W.rows ? frobenius(tg.grad_W) : 0.0;
    stats.grad_norm_M = std::sqrt(std::pow(tg.grad_A.rows ? frobenius(tg.grad_A) : 0.0, 2) +
                                  std::pow(tg.grad_B.rows ? frobenius(tg.grad_B) : 0.0, 2) +
                                  std::pow(tg.grad_U1.rows ? frobenius(tg.grad_U1) : 0.0, 2) +
                                  std::pow(tg.grad_V1.rows ? frobenius(tg.grad_V1) : 0.0, 2));
    stats.grad_norm_E = tg.grad_E.rows ? frobenius(tg.grad_E) : 0.0;

    // ---- mutation phase.
    StepResult result;
    result.loss = loss;
    result.cache_refreshed = last_refresh_step_ == step_;

    if (want_transform_grads) {
        clip_group(tg.grad_W);
        clip_group(tg.grad_A);
        clip_group(tg.grad_B);
        clip_group(tg.grad_U1);
        clip_group(tg.grad_V1);
        clip_group(tg.grad_E);
        if (tg.grad_A.rows) adam_update(opt_a_, tf_.A, tg.grad_A, cfg_.lr_M, cfg_.weight_decay_M);
        if (tg.grad_B.rows) adam_update(opt_b_, tf_.B, tg.grad_B, cfg_.lr_M, cfg_.weight_decay_M);
        if (tg.grad_U1.rows) adam_update(opt_a_, tf_.U1, tg.grad_U1, cfg_.lr_M, cfg_.weight_decay_M);
        if (tg.grad_V1.rows) adam_update(opt_b_, tf_.V1, tg.grad_V1, cfg_.lr_M, cfg_.weight_decay_M);
        if (tg.grad_W.rows) {
            adam_update(opt_w_, tf_.W, tg.grad_W, cfg_.lr_W, 0.0);
            tf_.W = spectral_clip(tf_.W, cfg_.tau_w);
        }
    }

    switch (cfg_.protocol) {
        case Protocol::FrozenE:
            break;
        case Protocol::JointDirect:
            if (method_ == Method::GRIT && tg.grad_E.rows)
                adam_update(opt_e_, cb_.E, tg.grad_E, cfg_.lr_E, 0.0);
            break;
        case Protocol::JointEMA: {
            cb_.E = ema_codebook_update(cb_.E, assignments, latents, cfg_.ema_momentum);
            if ((step_ + 1) % cfg_.t_ema == 0)
                for (long i = 0; i < K; ++i) {
                    const double n = norm2(cb_.E.row(i), d);
                    if (n > 0.0)
                        for (long j = 0; j < d; ++j) cb_.E(i, j) /= n;
                }
            break;
        }
    }
    for (long i : pulled)
        for (long j = 0; j < d; ++j)
            cb_.E(i, j) += cfg_.lambda_u * (mean_z[static_cast<size_t>(j)] - cb_.E(i, j));

    for (const auto& a : assignments) {
        if (window_.size() < kWindowCap) {
            window_.push_back(a.index);
        } else {
            window_[window_pos_] = a.index;
            window_pos_ = (window_pos_ + 1) % kWindowCap;
        }
    }
    std::vector<double> freq(static_cast<size_t>(K), 0.0);
    for (const auto& a : assignments) freq[static_cast<size_t>(a.index)] += 1.0 / B;
    for (long i = 0; i < K; ++i)
        phat_[static_cast<size_t>(i)] =
            kRateDecay * phat_[static_cast<size_t>(i)] + (1.0 - kRateDecay) * freq[static_cast<size_t>(i)];
    note_latents(latents);

    if (e_mutable && step_ > 0 && step_ % cfg_.t_scan == 0) {
        Mat pool = reservoir_;
        if (reservoir_fill_ < pool.rows) {
            Mat trimmed(reservoir_fill_, d);
            for (long i = 0; i < reservoir_fill_; ++i)
                for (long j = 0; j < d; ++j) trimmed(i, j) = pool(i, j);
            pool = std::move(trimmed);
        }
        result.reset_count = dead_code_reset(cb_.E, phat_, cfg_.tau_dead, pool, rng_);
    }

    const UsageStats hist_stats = compute_stats(window_, K);
    stats.utilization = hist_stats.utilization;
    stats.dead_rate = hist_stats.dead_rate;
    stats.entropy = hist_stats.entropy;
    stats.activation_rate = phat_;
    stats.sigma_w = tf_.W.rows ? spectral_norm(tf_.W) : 0.0;
    stats.drift = cache_.drift;
    stats.row_norm_min = std::numeric_limits<double>::max();
    stats.row_norm_max = 0.0;
    for (long i = 0; i < K; ++i) {
        const double n = norm2(cache_.Eprime.row(i), d);
        stats.row_norm_min = std::min(stats.row_norm_min, n);
        stats.row_norm_max = std::max(stats.row_norm_max, n);
    }
    result.stats = std::move(stats);

    if (grad_latents) *grad_latents = std::move(grad_z);
    ++step_;
    return result;
}

StepResult Trainer::step(const Mat& latents) {
    auto assignments = assign_batch(latents);
    const long B = latents.rows, d = latents.cols;
    Mat upstream(B, d);
    double loss = 0.0;
    for (long p = 0; p < B; ++p)
        for (long j = 0; j < d; ++j) {
            const double diff = assignments[static_cast<size_t>(p)].zhat[static_cast<size_t>(j)] -
                                latents(p, j);
            upstream(p, j) = 2.0 * diff / static_cast<double>(B);
            loss += diff * diff / static_cast<double>(B);
        }
    return apply_gradients(latents, assignments, upstream, loss, nullptr);
}

}  // namespace gritvq
