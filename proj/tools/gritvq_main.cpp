#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "gritvq/gradcheck.hpp"
#include "gritvq/harness.hpp"
#include "gritvq/numerics.hpp"
#include "gritvq/serialize.hpp"

using namespace gritvq;

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DomainError(path + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DomainError("cannot write " + path.string());
    out << text;
}

int run_train(const std::string& config_path, bool seed_set, long seed, const std::string& out) {
    ExperimentConfig cfg = experiment_config_from_json(load_json(config_path));
    if (seed_set) {
        cfg.task.seed = seed;
        cfg.train.seed = seed;
    }
    if (!out.empty()) cfg.out_path = out;
    RunResult r = run_experiment(cfg);
    std::cout << run_result_to_json(r).dump(2) << "\n";
    return 0;
}

int run_compare(const std::vector<std::string>& config_paths, long seeds, const std::string& out) {
    std::vector<ExperimentConfig> cfgs;
    for (const auto& p : config_paths) cfgs.push_back(experiment_config_from_json(load_json(p)));
    Comparison cmp = compare_methods(cfgs, seeds);
    std::cout << comparison_csv(cmp);
    if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_text(std::filesystem::path(out) / "compare.csv", comparison_csv(cmp));
        write_text(std::filesystem::path(out) / "compare.json", comparison_json(cmp).dump(2) + "\n");
    }
    return 0;
}

int run_gradcheck(const std::string& family, const std::string& transform, long trials) {
    std::vector<RadiusFamily> families;
    if (family == "all") {
        for (int f = 0; f <= static_cast<int>(RadiusFamily::AdaptiveMahalanobis); ++f)
            families.push_back(static_cast<RadiusFamily>(f));
    } else {
        families.push_back(family_from_name(family));
    }
    std::vector<TransformKind> kinds;
    if (transform == "all") {
        for (int k = 0; k <= static_cast<int>(TransformKind::LowRankNormalized); ++k)
            kinds.push_back(static_cast<TransformKind>(k));
    } else {
        kinds.push_back(kind_from_name(transform));
    }
    FDConfig cfg;
    if (trials > 0) cfg.trials = trials;
    bool ok = true;
    auto out = nlohmann::json::array();
    for (RadiusFamily f : families) {
        for (TransformKind k : kinds) {
            GradCheckReport rep = check_pipeline_gradients(f, k, cfg);
            out.push_back(nlohmann::json::parse(report_json(rep)));
            std::cerr << family_name(f) << " x " << kind_name(k)
                      << ": max_rel_err=" << rep.max_rel_err
                      << " param_max_rel_err=" << rep.param_max_rel_err
                      << " skip_rate=" << rep.skip_rate << "\n";
            if (rep.max_rel_err > cfg.tolerance) ok = false;
        }
    }
    std::cout << out.dump(2) << "\n";
    return ok ? 0 : 1;
}

int run_bench(const std::vector<long>& ks, long d, long r, long repeats) {
    BenchReport rep = bench_transform_scaling(ks, d, r, repeats);
    std::cout << bench_json(rep).dump(2) << "\n";
    return 0;
}

int run_inspect(const std::string& target) {
    namespace fs = std::filesystem;
    fs::path path(target);
    fs::path dir;
    if (fs::is_directory(path)) {
        dir = path;
        path = path / "codebook.json";
    } else {
        dir = path.parent_path();
    }
    auto j = load_json(path.string());
    if (!j.contains("codebook") || !j.contains("transform"))
        throw DomainError(path.string() + ": expected a saved run codebook");
    CodebookState cb = codebook_from_json(j["codebook"]);
    TransformSpec tf = transform_spec_from_json(j["transform"]);
    TransformedCache cache = refresh_cache(cb, tf, 0);

    nlohmann::json out;
    out["K"] = cb.E.rows;
    out["d"] = cb.E.cols;
    out["transform"] = kind_name(tf.kind);
    auto row_norm_range = [](const Mat& m) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (long i = 0; i < m.rows; ++i) {
            const double n = norm2(m.row(i), m.cols);
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        return std::pair<double, double>{lo, hi};
    };
    auto [elo, ehi] = row_norm_range(cb.E);
    out["codebook_row_norm"] = {{"min", elo}, {"max", ehi}};
    auto [plo, phi] = row_norm_range(cache.Eprime);
    out["transformed_row_norm"] = {{"min", plo}, {"max", phi}};
    if (tf.W.rows) out["sigma_w"] = spectral_norm(tf.W);
    if (tf.kind == TransformKind::LinearLowRank || tf.kind == TransformKind::LowRankNormalized)
        out["rank"] = tf.A.cols;

    fs::path result = dir / "result.json";
    if (fs::exists(result)) {
        auto rj = load_json(result.string());
        nlohmann::json fin;
        for (const char* k : {"quant_mse", "recon_mse", "utilization", "dead_rate", "entropy"})
            if (rj.contains(k)) fin[k] = rj[k];
        out["final_metrics"] = fin;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GRIT-VQ quantizer experiments"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "run one experiment from a JSON config");
    std::string train_config, train_out;
    long train_seed = 0;
    train->add_option("--config", train_config, "experiment config JSON")->required();
    auto* seed_opt = train->add_option("--seed", train_seed, "override task and train seeds");
    train->add_option("--out", train_out, "run directory for artifacts");

    auto* compare = app.add_subcommand("compare", "compare methods over repeated seeds");
    std::vector<std::string> compare_configs;
    std::string compare_out;
    long compare_seeds = 5;
    compare->add_option("--configs", compare_configs, "two or more config JSONs")
        ->required()
        ->expected(-2);
    compare->add_option("--seeds", compare_seeds, "number of seed repeats");
    compare->add_option("--out", compare_out, "directory for compare.csv / compare.json");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::string gc_family = "all", gc_transform = "all";
    long gc_trials = 0;
    gradcheck->add_option("--family", gc_family, "radius family name, or 'all'");
    gradcheck->add_option("--transform", gc_transform, "transform kind name, or 'all'");
    gradcheck->add_option("--trials", gc_trials, "accepted trials per combination");

    auto* bench = app.add_subcommand("bench", "time apply_transform across codebook sizes");
    std::vector<long> bench_ks = {256, 512, 1024, 2048};
    long bench_d = 32, bench_r = 32, bench_repeats = 5;
    bench->add_option("--k", bench_ks, "codebook sizes, comma separated")->delimiter(',');
    bench->add_option("--d", bench_d, "embedding dim");
    bench->add_option("--r", bench_r, "low-rank factor rank");
    bench->add_option("--repeats", bench_repeats, "timing repeats per size");

    auto* inspect = app.add_subcommand("inspect", "dump codebook stats from a saved run");
    std::string inspect_target;
    inspect->add_option("target", inspect_target, "run directory or codebook.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train) return run_train(train_config, seed_opt->count() > 0, train_seed, train_out);
        if (*compare) return run_compare(compare_configs, compare_seeds, compare_out);
        if (*gradcheck) return run_gradcheck(gc_family, gc_transform, gc_trials);
        if (*bench) return run_bench(bench_ks, bench_d, bench_r, bench_repeats);
        if (*inspect) return run_inspect(inspect_target);
    } catch (const NanAbort& e) {
        std::cerr << "nan abort at step " << e.step << ": " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
