#include "gritvq/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gritvq/json_io.hpp"
#include "gritvq/numerics.hpp"
#include "gritvq/serialize.hpp"

namespace gritvq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                ok = true;
                break;
            }
        if (!ok)
            throw DomainError(std::string(where) + ": unknown field '" + it.key() + "'");
    }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("cannot open " + path.string() + " for writing");
    out << content;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["protocol"] = protocol_name(c.protocol);
    j["lr_M"] = c.lr_M;
    j["lr_W"] = c.lr_W;
    j["lr_E"] = c.lr_E;
    j["weight_decay_M"] = c.weight_decay_M;
    j["tau_w"] = c.tau_w;
    j["cache_T"] = c.cache_T;
    j["lambda_u"] = c.lambda_u;
    j["tau_u"] = c.tau_u;
    j["ema_momentum"] = c.ema_momentum;
    j["t_ema"] = c.t_ema;
    j["t_scan"] = c.t_scan;
    j["tau_dead"] = c.tau_dead;
    j["steps"] = c.steps;
    j["batch"] = c.batch;
    j["seed"] = c.seed;
    j["grad_clip"] = c.grad_clip;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"protocol", "lr_M", "lr_W", "lr_E", "weight_decay_M", "tau_w", "cache_T",
                "lambda_u", "tau_u", "ema_momentum", "t_ema", "t_scan", "tau_dead", "steps",
                "batch", "seed", "grad_clip"},
               "train config");
    TrainConfig c;
    if (j.contains("protocol")) c.protocol = protocol_from_name(j["protocol"].get<std::string>());
    if (j.contains("lr_M")) c.lr_M = j["lr_M"].get<double>();
    if (j.contains("lr_W")) c.lr_W = j["lr_W"].get<double>();
    if (j.contains("lr_E")) c.lr_E = j["lr_E"].get<double>();
    if (j.contains("weight_decay_M")) c.weight_decay_M = j["weight_decay_M"].get<double>();
    if (j.contains("tau_w")) c.tau_w = j["tau_w"].get<double>();
    if (j.contains("cache_T")) c.cache_T = j["cache_T"].get<long>();
    if (j.contains("lambda_u")) c.lambda_u = j["lambda_u"].get<double>();
    if (j.contains("tau_u")) c.tau_u = j["tau_u"].get<double>();
    if (j.contains("ema_momentum")) c.ema_momentum = j["ema_momentum"].get<double>();
    if (j.contains("t_ema")) c.t_ema = j["t_ema"].get<long>();
    if (j.contains("t_scan")) c.t_scan = j["t_scan"].get<long>();
    if (j.contains("tau_dead")) c.tau_dead = j["tau_dead"].get<double>();
    if (j.contains("steps")) c.steps = j["steps"].get<long>();
    if (j.contains("batch")) c.batch = j["batch"].get<long>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"].get<double>();
    return c;
}

nlohmann::json task_to_json(const SyntheticTask& t) {
    nlohmann::json j;
    j["kind"] = task_kind_name(t.kind);
    j["D"] = t.D;
    j["d"] = t.d;
    j["n_train"] = t.n_train;
    j["n_eval"] = t.n_eval;
    j["seed"] = t.seed;
    nlohmann::json g;
    g["means"] = mat_to_json(t.gmm.means);
    g["weights"] = t.gmm.weights;
    g["cov_scale"] = t.gmm.cov_scale;
    j["gmm"] = g;
    return j;
}

SyntheticTask task_from_json(const nlohmann::json& j) {
    check_keys(j, {"kind", "D", "d", "n_train", "n_eval", "seed", "gmm"}, "task");
    SyntheticTask t;
    if (j.contains("kind")) t.kind = task_kind_from_name(j["kind"].get<std::string>());
    if (j.contains("D")) t.D = j["D"].get<long>();
    if (j.contains("d")) t.d = j["d"].get<long>();
    if (j.contains("n_train")) t.n_train = j["n_train"].get<long>();
    if (j.contains("n_eval")) t.n_eval = j["n_eval"].get<long>();
    if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
    if (!j.contains("gmm")) throw DomainError("task: missing gmm block");
    const auto& g = j["gmm"];
    check_keys(g, {"means", "weights", "cov_scale"}, "gmm");
    if (!g.contains("means") || !g.contains("weights"))
        throw DomainError("gmm: means and weights are required");
    t.gmm.means = mat_from_json(g["means"]);
    t.gmm.weights = g["weights"].get<std::vector<double>>();
    if (g.contains("cov_scale")) t.gmm.cov_scale = g["cov_scale"].get<double>();
    return t;
}

// eval points come from their own stream so training consumption never shifts them
constexpr uint64_t kEvalStreamSalt = 0x45564131ull;

}  // namespace

const char* task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::GMMDirect: return "gmm_direct";
        case TaskKind::LinearAE: return "linear_ae";
    }
    throw DomainError("unknown task kind id");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "gmm_direct") return TaskKind::GMMDirect;
    if (name == "linear_ae") return TaskKind::LinearAE;
    throw DomainError("unknown task kind '" + name + "'");
}

void validate_task(const SyntheticTask& task) {
    if (task.d < 1) throw DomainError("task: latent dim must be positive");
    if (task.kind == TaskKind::LinearAE && task.D < 1)
        throw DomainError("task: linear_ae needs a positive ambient dim");
    if (task.n_train < 0 || task.n_eval < 1)
        throw DomainError("task: n_train must be nonnegative and n_eval positive");
    const Mat& M = task.gmm.means;
    if (M.rows < 1) throw DomainError("task: gmm needs at least one component");
    const long data_dim = task.kind == TaskKind::LinearAE ? task.D : task.d;
    if (M.cols != data_dim)
        throw DomainError("task: gmm means have dim " + std::to_string(M.cols) + ", expected " +
                          std::to_string(data_dim));
    if (static_cast<long>(task.gmm.weights.size()) != M.rows)
        throw DomainError("task: one weight per component required");
    double sum = 0.0;
    for (double w : task.gmm.weights) {
        if (w < 0.0) throw DomainError("task: negative mixture weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw DomainError("task: mixture weights must sum to 1");
    if (task.gmm.cov_scale < 0.0) throw DomainError("task: covariance scale must be nonnegative");
}

Mat gen_gmm(const SyntheticTask& task, long n, Rng& rng) {
    validate_task(task);
    const Mat& M = task.gmm.means;
    Mat out(n, M.cols);
    for (long p = 0; p < n; ++p) {
        const double u = rng.uniform();
        long comp = M.rows - 1;
        double acc = 0.0;
        for (long c = 0; c < M.rows; ++c) {
            acc += task.gmm.weights[static_cast<size_t>(c)];
            if (u < acc) {
                comp = c;
                break;
            }
        }
        for (long j = 0; j < M.cols; ++j)
            out(p, j) = M(comp, j) + task.gmm.cov_scale * rng.normal();
    }
    return out;
}

Mat gen_eval_set(const SyntheticTask& task) {
    Rng rng(task.seed ^ kEvalStreamSalt);
    return gen_gmm(task, task.n_eval, rng);
}

void validate_experiment_config(const ExperimentConfig& cfg) {
    validate_task(cfg.task);
    if (cfg.K < 2) throw DomainError("config: K must be at least 2");
    if (cfg.log_every < 1) throw DomainError("config: log_every must be positive");
    if (!(cfg.lr_ae >= 0)) throw DomainError("config: lr_ae must be nonnegative");
    validate_train_config(cfg.train);
    if (cfg.init != "kmeans" && cfg.init != "gaussian" && cfg.init != "clustered")
        throw DomainError("config: init must be kmeans, gaussian, or clustered");
    if (cfg.init == "clustered" && cfg.task.kind != TaskKind::GMMDirect)
        throw DomainError("config: clustered init needs a gmm_direct task");
    if (cfg.method == Method::GRIT) {
        validate_radius_spec(cfg.radius, cfg.task.d);
        validate_transform_spec(cfg.transform, cfg.K, cfg.task.d);
    }
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["task"] = task_to_json(cfg.task);
    j["method"] = method_name(cfg.method);
    j["radius"] = radius_spec_to_json(cfg.radius);
    j["transform"] = transform_spec_to_json(cfg.transform);
    j["form"] = form_name(cfg.form);
    j["train"] = train_config_to_json(cfg.train);
    j["K"] = cfg.K;
    j["init"] = cfg.init;
    j["log_every"] = cfg.log_every;
    j["lr_ae"] = cfg.lr_ae;
    j["out_path"] = cfg.out_path;
    return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    check_keys(j,
               {"task", "method", "radius", "transform", "form", "train", "K", "init",
                "log_every", "lr_ae", "out_path"},
               "experiment config");
    ExperimentConfig cfg;
    if (!j.contains("task")) throw DomainError("experiment config: missing task");
    cfg.task = task_from_json(j["task"]);
    if (j.contains("method")) cfg.method = method_from_name(j["method"].get<std::string>());
    if (j.contains("radius")) cfg.radius = radius_spec_from_json(j["radius"]);
    if (j.contains("transform")) cfg.transform = transform_spec_from_json(j["transform"]);
    if (j.contains("form")) cfg.form = form_from_name(j["form"].get<std::string>());
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
    if (j.contains("K")) cfg.K = j["K"].get<long>();
    if (j.contains("init")) cfg.init = j["init"].get<std::string>();
    if (j.contains("log_every")) cfg.log_every = j["log_every"].get<long>();
    if (j.contains("lr_ae")) cfg.lr_ae = j["lr_ae"].get<double>();
    if (j.contains("out_path")) cfg.out_path = j["out_path"].get<std::string>();
    validate_experiment_config(cfg);
    return cfg;
}

nlohmann::json run_result_to_json(const RunResult& r) {
    nlohmann::json j;
    j["quant_mse"] = r.quant_mse;
    j["recon_mse"] = r.recon_mse;
    j["utilization"] = r.utilization;
    j["dead_rate"] = r.dead_rate;
    j["entropy"] = r.entropy;
    j["steps_run"] = r.steps_run;
    j["timings"] = {{"init_s", r.init_seconds},
                    {"train_s", r.train_seconds},
                    {"eval_s", r.eval_seconds}};
    return j;
}

AeForward linear_ae_forward(const Mat& X, const Mat& Z, const Mat& W_d,
                            const std::vector<Assignment>& asg, const RadiusSpec& rs,
                            SurrogateForm form, bool surrogate) {
    const long B = Z.rows, d = Z.cols, D = W_d.cols;
    if (X.rows != B || W_d.rows != d || static_cast<long>(asg.size()) != B)
        throw ShapeError("linear_ae_forward: shape mismatch");
    AeForward out;
    out.zq = Mat(B, d);
    for (long p = 0; p < B; ++p) {
        const auto& a = asg[static_cast<size_t>(p)];
        if (surrogate) {
            SurrogateContext ctx = surrogate_forward(
                std::span<const double>(Z.row(p), static_cast<size_t>(d)), a, rs, form);
            for (long j = 0; j < d; ++j) out.zq(p, j) = ctx.z_q[static_cast<size_t>(j)];
        } else {
            for (long j = 0; j < d; ++j) out.zq(p, j) = a.zhat[static_cast<size_t>(j)];
        }
    }
    out.xhat = matmul(out.zq, W_d);
    Mat dxhat(B, D);
    double loss = 0.0;
    for (long p = 0; p < B; ++p)
        for (long j = 0; j < D; ++j) {
            const double diff = out.xhat(p, j) - X(p, j);
            loss += diff * diff / static_cast<double>(B);
            dxhat(p, j) = 2.0 * diff / static_cast<double>(B);
        }
    out.loss = loss;
    out.upstream = matmul(dxhat, transpose(W_d));
    out.grad_Wd = matmul(transpose(out.zq), dxhat);
    return out;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    validate_experiment_config(cfg);
    RunResult res;
    const SyntheticTask& task = cfg.task;
    const long d = task.d;
    const bool ae = task.kind == TaskKind::LinearAE;
    auto t0 = Clock::now();

    Rng data_rng(task.seed);
    Rng init_rng(cfg.train.seed ^ 0x1A17B00Full);

    Mat W_e, W_d;
    if (ae) {
        W_e = random_normal(init_rng, task.D, d, 1.0 / std::sqrt(static_cast<double>(task.D)));
        W_d = random_normal(init_rng, d, task.D, 1.0 / std::sqrt(static_cast<double>(d)));
    }

    CodebookState cb;
    if (cfg.init == "kmeans") {
        Mat pool = gen_gmm(task, task.n_train, data_rng);
        Mat warm = ae ? matmul(pool, W_e) : std::move(pool);
        cb = init_codebook(warm, cfg.K, 25, init_rng);
    } else if (cfg.init == "gaussian") {
        cb = init_codebook(cfg.K, d, init_rng);
    } else {
        // tight gaussian ball around the first mixture component
        Mat E(cfg.K, d);
        for (long i = 0; i < cfg.K; ++i)
            for (long j = 0; j < d; ++j)
                E(i, j) = task.gmm.means(0, j) + 0.02 * init_rng.normal();
        cb = make_codebook(std::move(E));
    }

    TransformSpec tf;
    RadiusSpec rs;
    if (cfg.method == Method::GRIT) {
        tf = cfg.transform;
        rs = cfg.radius;
    }
    Trainer trainer(std::move(cb), std::move(tf), rs, cfg.form, cfg.method, cfg.train);
    OptState opt_we, opt_wd;
    res.init_seconds = seconds_since(t0);

    t0 = Clock::now();
    for (long step = 0; step < cfg.train.steps; ++step) {
        Mat batch = gen_gmm(task, cfg.train.batch, data_rng);
        StepResult sr;
        if (!ae) {
            sr = trainer.step(batch);
        } else {
            Mat Z = matmul(batch, W_e);
            auto asg = trainer.assign_batch(Z);
            AeForward fwd = linear_ae_forward(batch, Z, W_d, asg, trainer.radius(), cfg.form,
                                              cfg.method == Method::GRIT);
            Mat grad_z;
            sr = trainer.apply_gradients(Z, asg, fwd.upstream, fwd.loss, &grad_z);
            Mat grad_we = matmul(transpose(batch), grad_z);
            adam_update(opt_we, W_e, grad_we, cfg.lr_ae, 0.0);
            adam_update(opt_wd, W_d, fwd.grad_Wd, cfg.lr_ae, 0.0);
        }
        if ((step + 1) % cfg.log_every == 0)
            res.series.push_back(metrics_csv_row(step, sr.loss, sr.stats));
    }
    res.steps_run = cfg.train.steps;
    res.train_seconds = seconds_since(t0);

    t0 = Clock::now();
    Mat eval = gen_eval_set(task);
    Mat zev = ae ? matmul(eval, W_e) : std::move(eval);
    TransformedCache cache =
        refresh_cache(trainer.codebook(), trainer.transform(), cfg.train.steps);
    auto asg = batch_nn(cache, zev);
    const long n = zev.rows;
    std::vector<long> winners(static_cast<size_t>(n));
    double qmse = 0.0;
    for (long p = 0; p < n; ++p) {
        const auto& a = asg[static_cast<size_t>(p)];
        winners[static_cast<size_t>(p)] = a.index;
        qmse += a.gap * a.gap / static_cast<double>(n);
    }
    res.quant_mse = qmse;
    UsageStats es = compute_stats(winners, cfg.K);
    res.utilization = es.utilization;
    res.dead_rate = es.dead_rate;
    res.entropy = es.entropy;
    if (ae) {
        Mat q(n, d);
        for (long p = 0; p < n; ++p)
            for (long j = 0; j < d; ++j) q(p, j) = asg[static_cast<size_t>(p)].zhat[static_cast<size_t>(j)];
        Mat xhat = matmul(q, W_d);
        Mat x = gen_eval_set(task);
        double rmse = 0.0;
        for (long p = 0; p < n; ++p)
            for (long j = 0; j < task.D; ++j) {
                const double diff = xhat(p, j) - x(p, j);
                rmse += diff * diff / static_cast<double>(n);
            }
        res.recon_mse = rmse;
    }
    res.eval_seconds = seconds_since(t0);

    if (!cfg.out_path.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_path);
        const fs::path dir(cfg.out_path);
        write_file(dir / "config.json", experiment_config_to_json(cfg).dump(2) + "\n");
        nlohmann::json cj;
        cj["codebook"] = codebook_to_json(trainer.codebook());
        cj["transform"] = transform_spec_to_json(trainer.transform());
        write_file(dir / "codebook.json", cj.dump(2) + "\n");
        std::string csv = metrics_csv_header() + "\n";
        for (const auto& row : res.series) csv += row + "\n";
        write_file(dir / "metrics.csv", csv);
        write_file(dir / "result.json", run_result_to_json(res).dump(2) + "\n");
    }
    return res;
}

Comparison compare_methods(const std::vector<ExperimentConfig>& cfgs, long repeats) {
    if (cfgs.size() < 2) throw DomainError("compare_methods needs at least two configs");
    if (repeats < 1) throw DomainError("compare_methods needs at least one repeat");
    const std::string task_sig = task_to_json(cfgs[0].task).dump();
    for (size_t m = 1; m < cfgs.size(); ++m)
        if (task_to_json(cfgs[m].task).dump() != task_sig)
            throw DomainError("compare_methods: configs must share an identical task");

    Comparison cmp;
    cmp.repeats = repeats;
    cmp.metrics = {"quant_mse", "recon_mse", "utilization", "dead_rate", "entropy"};
    const size_t nm = cmp.metrics.size();
    for (size_t m = 0; m < cfgs.size(); ++m)
        cmp.methods.push_back("m" + std::to_string(m) + "_" + method_name(cfgs[m].method));
    cmp.values.assign(cfgs.size(), std::vector<std::vector<double>>(nm));
    for (size_t m = 0; m < cfgs.size(); ++m) {
        for (long s = 0; s < repeats; ++s) {
            ExperimentConfig c = cfgs[m];
            c.task.seed += static_cast<uint64_t>(s);
            c.train.seed += static_cast<uint64_t>(s);
            c.out_path.clear();
            RunResult r = run_experiment(c);
            const double vals[] = {r.quant_mse, r.recon_mse, r.utilization, r.dead_rate,
                                   r.entropy};
            for (size_t k = 0; k < nm; ++k) cmp.values[m][k].push_back(vals[k]);
        }
    }
    cmp.mean.assign(cfgs.size(), std::vector<double>(nm, 0.0));
    cmp.stddev.assign(cfgs.size(), std::vector<double>(nm, 0.0));
    cmp.diff_vs_first.assign(cfgs.size(),
                             std::vector<std::vector<double>>(nm, std::vector<double>(repeats)));
    for (size_t m = 0; m < cfgs.size(); ++m)
        for (size_t k = 0; k < nm; ++k) {
            double mu = 0.0;
            for (double v : cmp.values[m][k]) mu += v / repeats;
            double var = 0.0;
            for (double v : cmp.values[m][k]) var += (v - mu) * (v - mu);
            cmp.mean[m][k] = mu;
            cmp.stddev[m][k] = repeats > 1 ? std::sqrt(var / (repeats - 1)) : 0.0;
            for (long s = 0; s < repeats; ++s)
                cmp.diff_vs_first[m][k][static_cast<size_t>(s)] =
                    cmp.values[m][k][static_cast<size_t>(s)] -
                    cmp.values[0][k][static_cast<size_t>(s)];
        }
    return cmp;
}

std::string comparison_csv(const Comparison& c) {
    std::string out = "method,metric,mean,stddev";
    for (long s = 0; s < c.repeats; ++s) out += ",seed_" + std::to_string(s);
    for (long s = 0; s < c.repeats; ++s) out += ",diff_" + std::to_string(s);
    out += "\n";
    for (size_t m = 0; m < c.methods.size(); ++m)
        for (size_t k = 0; k < c.metrics.size(); ++k) {
            out += c.methods[m] + "," + c.metrics[k] + "," + fmt17(c.mean[m][k]) + "," +
                   fmt17(c.stddev[m][k]);
            for (double v : c.values[m][k]) out += "," + fmt17(v);
            for (double v : c.diff_vs_first[m][k]) out += "," + fmt17(v);
            out += "\n";
        }
    return out;
}

nlohmann::json comparison_json(const Comparison& c) {
    nlohmann::json j;
    j["repeats"] = c.repeats;
    j["metrics"] = c.metrics;
    j["methods"] = c.methods;
    nlohmann::json results = nlohmann::json::object();
    for (size_t m = 0; m < c.methods.size(); ++m) {
        nlohmann::json per = nlohmann::json::object();
        for (size_t k = 0; k < c.metrics.size(); ++k) {
            per[c.metrics[k]] = {{"mean", c.mean[m][k]},
                                 {"stddev", c.stddev[m][k]},
                                 {"per_seed", c.values[m][k]},
                                 {"diff_vs_first", c.diff_vs_first[m][k]}};
        }
        results[c.methods[m]] = per;
    }
    j["results"] = results;
    return j;
}

BenchReport bench_transform_scaling(const std::vector<long>& ks, long d, long r, long repeats,
                                    uint64_t seed) {
    if (ks.empty()) throw DomainError("bench: need at least one K");
    for (size_t i = 0; i + 1 < ks.size(); ++i)
        if (ks[i] >= ks[i + 1]) throw DomainError("bench: K list must increase");
    if (d < 1 || r < 1) throw DomainError("bench: d and r must be positive");
    if (r > std::min(ks.front(), d)) throw DomainError("bench: rank exceeds min(K, d)");
    if (repeats < 1) throw DomainError("bench: repeats must be positive");

    Rng rng(seed ^ 0xBE7C4A11ull);
    BenchReport rep;
    double sink = 0.0;
    for (long K : ks) {
        Mat E = random_normal(rng, K, d);
        TransformSpec spec;
        spec.kind = TransformKind::LinearLowRank;
        spec.rank = r;
        spec.A = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.B = random_normal(rng, K, r, 1.0 / std::sqrt(static_cast<double>(r)));
        spec.W = Mat::identity(d);
        for (auto& x : spec.W.data) x += 0.1 * rng.normal();

        auto t0 = Clock::now();
        sink += apply_transform(spec, E)(0, 0);
        const double once = std::max(seconds_since(t0), 1e-8);
        const long inner = std::max(1L, static_cast<long>(std::ceil(0.01 / once)));

        std::vector<double> times;
        for (long rep_i = 0; rep_i < repeats; ++rep_i) {
            t0 = Clock::now();
            for (long i = 0; i < inner; ++i) sink += apply_transform(spec, E)(0, 0);
            times.push_back(seconds_since(t0) / static_cast<double>(inner));
        }
        BenchRow row;
        row.K = K;
        row.inner_reps = inner;
        row.min_seconds = *std::min_element(times.begin(), times.end());
        double mu = 0.0;
        for (double t : times) mu += t / repeats;
        row.mean_seconds = mu;
        double var = 0.0;
        for (double t : times) var += (t - mu) * (t - mu);
        row.stddev_seconds = repeats > 1 ? std::sqrt(var / (repeats - 1)) : 0.0;
        rep.rows.push_back(row);
    }
    if (!std::isfinite(sink)) std::fprintf(stderr, "bench: non-finite checksum\n");

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(rep.rows.size());
    for (const auto& row : rep.rows) {
        const double x = static_cast<double>(row.K), y = row.min_seconds;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    if (rep.rows.size() > 1) {
        rep.fit_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        rep.fit_intercept = (sy - rep.fit_slope * sx) / n;
    }
    for (size_t i = 0; i + 1 < rep.rows.size(); ++i)
        rep.doubling_ratios.push_back(rep.rows[i + 1].min_seconds / rep.rows[i].min_seconds);
    return rep;
}

nlohmann::json bench_json(const BenchReport& b) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : b.rows)
        rows.push_back({{"K", r.K},
                        {"min_seconds", r.min_seconds},
                        {"mean_seconds", r.mean_seconds},
                        {"stddev_seconds", r.stddev_seconds},
                        {"inner_reps", r.inner_reps}});
    nlohmann::json j;
    j["rows"] = rows;
    j["fit_slope"] = b.fit_slope;
    j["fit_intercept"] = b.fit_intercept;
    j["doubling_ratios"] = b.doubling_ratios;
    return j;
}

ExperimentConfig collapse_preset(Method method, uint64_t seed) {
    ExperimentConfig cfg;
    const long d = 16, comps = 8;
    Mat means(comps, d);
    means(0, 0) = 6.0;
    for (long j = 1; j < comps; ++j) {
        const double ang = 2.0 * M_PI * static_cast<double>(j) / 7.0;
        means(j, 0) = std::cos(ang);
        means(j, 1) = std::sin(ang);
    }
    cfg.task.kind = TaskKind::GMMDirect;
    cfg.task.gmm.means = std::move(means);
    cfg.task.gmm.weights.assign(static_cast<size_t>(comps), 0.999 / 7.0);
    cfg.task.gmm.weights[0] = 0.001;
    cfg.task.gmm.cov_scale = 0.35;
    cfg.task.d = d;
    cfg.task.n_train = 4096;
    cfg.task.n_eval = 4096;
    cfg.task.seed = seed;

    cfg.K = 64;
    cfg.init = "clustered";
    cfg.log_every = 50;
    cfg.method = method;

    cfg.train.protocol = Protocol::FrozenE;
    cfg.train.steps = 5000;
    cfg.train.batch = 256;
    cfg.train.lr_M = 3e-4;
    cfg.train.lr_W = 6e-4;
    cfg.train.weight_decay_M = 1e-4;
    cfg.train.tau_w = 1.75;
    cfg.train.seed = seed;

    if (method == Method::GRIT) {
        // architecture init is part of the preset, so it uses its own fixed stream
        Rng trng(0xFACEFEEDull);
        cfg.transform.kind = TransformKind::LinearLowRank;
        init_lowrank_ortho(cfg.transform, cfg.K, 16, trng);
        cfg.transform.W = Mat::identity(d);
        cfg.transform.row_normalize = false;
    }
    return cfg;
}

}  // namespace gritvq
