// stackdec: decompose a black-box prediction function, observed as samples,
// into main effects, interactions and a residual top-order term under the
// stacked-orthogonality constraints, and quantify the level-wise explained
// variance.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "stackdec/ensemble.hpp"
#include "stackdec/experiments.hpp"
#include "stackdec/io.hpp"
#include "stackdec/metrics.hpp"
#include "stackdec/scenario.hpp"
#include "stackdec/threading.hpp"

namespace fs = std::filesystem;
using namespace stackdec;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("STACKDEC_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    return default_threads();
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

json base_manifest(const std::string& command_line, int threads) {
    json m;
    m["tool_version"] = kVersion;
    m["command_line"] = command_line;
    m["threads"] = threads;
    return m;
}

void write_manifest(const json& m, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw ValidationError("cannot write manifest.json in " + dir);
    out << m.dump(2) << '\n';
}

struct TrainFlags {
    std::vector<int> widths;
    double dropout = 0.2;
    double lr = 0.0;
    int batch_size = 0;
    int max_epochs = 0;
    double r2_target = 0.0;
    bool full_batch = false;
    std::string config_path;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--widths", widths, "hidden layer widths (default 256 128 64 32 8)");
        cmd->add_option("--dropout", dropout, "dropout rate for hidden layers 2-4");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--batch-size", batch_size, "mini-batch size");
        cmd->add_option("--max-epochs", max_epochs, "epoch cap");
        cmd->add_option("--r2-target", r2_target, "training R^2 convergence target");
        cmd->add_flag("--full-batch", full_batch, "train full-batch instead of mini-batches");
        cmd->add_option("--config", config_path, "JSON file with train/subnet defaults");
    }

    void apply(TrainConfig& train, SubNetworkConfig& subnet) const {
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ValidationError("cannot open config file: " + config_path);
            json j;
            try {
                in >> j;
            } catch (const json::parse_error& e) {
                throw ValidationError("config file is not valid JSON: " + std::string(e.what()));
            }
            if (j.contains("train")) j.at("train").get_to(train);
            if (j.contains("subnet")) j.at("subnet").get_to(subnet);
        }
        if (!widths.empty()) subnet = SubNetworkConfig::with_widths(widths, dropout);
        if (lr > 0.0) train.learning_rate = lr;
        if (batch_size > 0) train.batch_size = batch_size;
        if (max_epochs > 0) train.max_epochs = max_epochs;
        if (r2_target > 0.0) train.r2_target = r2_target;
        if (full_batch) train.full_batch = true;
    }
};

void write_decomposition_outputs(const DecompositionResult& result, const SampleSet& samples,
                                 const std::string& out_dir) {
    MetricsTable metrics = compute_metrics(result.final_vectors, &samples.F);
    write_decomposition_dir(result, samples.F, metrics, out_dir);
    write_term_csvs(result, samples.X, out_dir);
}

int cmd_decompose(const std::string& input, const std::string& pred_col,
                  const std::string& effects_path, int max_order, int ensemble_members,
                  uint64_t seed, const std::string& out_dir, bool do_standardize,
                  const TrainFlags& tf, int threads, const std::string& command_line,
                  bool save_models) {
    Timer timer;
    SampleSet samples = load_csv(input, pred_col);
    StandardizeRecord std_record;
    if (do_standardize) {
        auto [s, rec] = standardize(samples);
        samples = std::move(s);
        std_record = std::move(rec);
    }

    EffectSet set;
    if (!effects_path.empty()) {
        set = load_effects_file(effects_path, static_cast<int>(samples.d()));
    } else if (max_order > 0) {
        int d = static_cast<int>(samples.d());
        if (max_order >= d) {
            set = enumerate_full(d);
        } else {
            std::vector<EffectIndex> terms;
            for (const auto& t : enumerate_full(d).terms)
                if (t.level() <= max_order) terms.push_back(t);
            set = restrict_to(terms, d);
        }
    } else {
        throw ValidationError("either --effects or --max-order is required");
    }

    EnsembleConfig ec;
    ec.members = ensemble_members;
    ec.base_seed = seed;
    ec.parallelism = threads;
    tf.apply(ec.train, ec.subnet);

    DecompositionResult result = decompose(samples, set, ec);
    write_decomposition_outputs(result, samples, out_dir);
    if (do_standardize) {
        json jr;
        jr["mean"] = std_record.mean;
        jr["sd"] = std_record.sd;
        std::ofstream out(fs::path(out_dir) / "standardize_record.json");
        out << jr.dump(2) << '\n';
    }
    if (save_models) {
        for (size_t r = 0; r < result.members.size(); ++r)
            save_model(*result.members[r].model, result.members[r].fit_report,
                       (fs::path(out_dir) / ("model_member" + std::to_string(r) + ".bin")).string());
    }

    json manifest = base_manifest(command_line, threads);
    manifest["command"] = "decompose";
    manifest["seed"] = seed;
    json member_seeds = json::array();
    for (int r = 0; r < ec.members; ++r) member_seeds.push_back(ec.member_seed(r));
    manifest["member_seeds"] = std::move(member_seeds);
    manifest["ensemble_members"] = ec.members;
    manifest["effects"] = effect_set_to_json(set);
    manifest["train_config"] = ec.train;
    manifest["subnet_config"] = ec.subnet;
    manifest["standardized"] = do_standardize;
    manifest["inputs"] = json{{input, file_digest(input)}};
    manifest["timings_sec"] = json{{"total", timer.seconds()}};
    write_manifest(manifest, out_dir);

    std::cout << "decomposition written to " << out_dir << " (intercept "
              << result.final_vectors.intercept << ", " << set.term_count() << " terms)\n";
    for (const auto& w : result.warnings) std::cout << "warning: " << w << '\n';
    return 0;
}

int cmd_oracle(int scenario, Eigen::Index n_ref, uint64_t seed, const std::string& out_dir,
               int threads, const std::string& command_line) {
    Timer timer;
    fs::create_directories(out_dir);
    ReferenceDecomposition ref = build_reference(scenario, n_ref, seed);
    std::string path = (fs::path(out_dir) / ("reference_s" + std::to_string(scenario) + ".json")).string();
    save_reference(ref, path);

    json manifest = base_manifest(command_line, threads);
    manifest["command"] = "oracle";
    manifest["scenario"] = scenario;
    manifest["seed"] = seed;
    manifest["n_ref"] = n_ref;
    manifest["timings_sec"] = json{{"total", timer.seconds()}};
    write_manifest(manifest, out_dir);

    std::cout << "reference decomposition written to " << path << " (I1 " << ref.i1 << ", I2 "
              << ref.i2 << ", max offdiag " << ref.max_offdiag << ")\n";
    return 0;
}

int cmd_experiment(int scenario, Eigen::Index n, int replicates, int ensemble_members,
                   uint64_t seed, Eigen::Index n_ref, uint64_t ref_seed,
                   const std::string& out_dir, const TrainFlags& tf, int threads,
                   const std::string& command_line) {
    Timer timer;
    fs::create_directories(out_dir);

    // reuse a cached reference with matching provenance, else build and store
    ReferenceDecomposition ref;
    std::string ref_path =
        (fs::path(out_dir) / ("reference_s" + std::to_string(scenario) + ".json")).string();
    bool reused = false;
    if (fs::exists(ref_path)) {
        ReferenceDecomposition cached = load_reference(ref_path);
        if (cached.scenario == scenario && cached.seed == ref_seed && cached.n_ref == n_ref) {
            ref = std::move(cached);
            reused = true;
        }
    }
    double ref_seconds = 0.0;
    if (!reused) {
        Timer rt;
        ref = build_reference(scenario, n_ref, ref_seed);
        ref_seconds = rt.seconds();
        save_reference(ref, ref_path);
    }

    ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.n = n;
    cfg.replicates = replicates;
    cfg.seed = seed;
    cfg.n_ref = n_ref;
    cfg.ref_seed = ref_seed;
    cfg.ensemble.members = ensemble_members;
    cfg.ensemble.parallelism = threads;
    tf.apply(cfg.ensemble.train, cfg.ensemble.subnet);

    ExperimentReport report = run_experiment(cfg, ref);

    {
        std::ofstream out(fs::path(out_dir) / "experiment_report.json");
        if (!out) throw ValidationError("cannot write experiment_report.json in " + out_dir);
        out << experiment_report_to_json(report).dump(2) << '\n';
    }
    for (size_t r = 0; r < report.replicates.size(); ++r) {
        const auto& rr = report.replicates[r];
        std::string rep_dir = (fs::path(out_dir) / ("rep" + std::to_string(r))).string();
        write_decomposition_outputs(rr.decomposition, rr.samples, rep_dir);
    }
    export_plotdata(report, (fs::path(out_dir) / "plots").string());

    json manifest = base_manifest(command_line, threads);
    manifest["command"] = "experiment";
    manifest["scenario"] = scenario;
    manifest["n"] = n;
    manifest["replicates"] = replicates;
    manifest["seed"] = seed;
    manifest["ref_seed"] = ref_seed;
    manifest["n_ref"] = n_ref;
    manifest["reference_reused"] = reused;
    json seeds = json::array();
    for (int r = 0; r < replicates; ++r)
        seeds.push_back(json{{"feature", cfg.feature_seed(r)}, {"ensemble", cfg.ensemble_seed(r)}});
    manifest["replicate_seeds"] = std::move(seeds);
    manifest["ensemble_members"] = ensemble_members;
    manifest["train_config"] = cfg.ensemble.train;
    manifest["subnet_config"] = cfg.ensemble.subnet;
    manifest["timings_sec"] = json{{"total", timer.seconds()}, {"reference", ref_seconds}};
    write_manifest(manifest, out_dir);

    std::cout << "scenario " << scenario << ", n=" << n << ": mean I1 " << report.mean_i1
              << " (reference " << ref.i1 << "), mean I2 " << report.mean_i2 << " (reference "
              << ref.i2 << "), member R^2 target share " << report.member_target_share << '\n';
    return 0;
}

int cmd_metrics(const std::string& result_dir, const std::string& out_path,
                const std::string& command_line, int threads) {
    StoredDecomposition sd = load_decomposition_dir(result_dir);
    MetricsTable recomputed = compute_metrics(sd.effects, &sd.original_f);

    std::string stored_path = (fs::path(result_dir) / "metrics.csv").string();
    double max_diff = 0.0;
    bool compared = false;
    if (fs::exists(stored_path)) {
        MetricsTable stored = read_metrics_csv(stored_path);
        if (stored.rows.size() != recomputed.rows.size())
            throw NumericError("stored metrics.csv has a different row count than the recomputation");
        for (size_t i = 0; i < stored.rows.size(); ++i) {
            const auto& a = stored.rows[i];
            const auto& b = recomputed.rows[i];
            if (a.metric != b.metric || a.key != b.key || a.denominator != b.denominator)
                throw NumericError("stored metrics.csv row " + std::to_string(i) +
                                   " does not match the recomputation layout");
            max_diff = std::max(max_diff, std::abs(a.value - b.value));
        }
        compared = true;
    }
    if (!out_path.empty()) write_metrics_csv(recomputed, out_path);
    for (const auto& row : recomputed.rows)
        std::cout << row.metric << '\t' << row.key << '\t' << fp17(row.value) << '\t'
                  << row.denominator << '\n';
    if (compared) {
        std::cout << "max |stored - recomputed| = " << max_diff << '\n';
        if (max_diff > 1e-12) throw NumericError("stored metrics deviate beyond 1e-12");
    }
    (void)command_line;
    (void)threads;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stacked-orthogonality functional decomposition of black-box predictions"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string command_line = join_args(argc, argv);

    int threads_flag = 0;
    app.add_option("--threads", threads_flag, "worker threads (0 = STACKDEC_THREADS env or all cores)");

    // decompose
    auto* dec = app.add_subcommand("decompose", "decompose user data from a CSV file");
    std::string input, pred_col, effects_path, out_dir;
    int max_order = 0, ensemble_members = 10;
    uint64_t seed = 42;
    bool do_standardize = false, save_models = false;
    TrainFlags dec_tf;
    dec->add_option("--input", input, "samples CSV")->required();
    dec->add_option("--pred-col", pred_col, "prediction column name")->required();
    dec->add_option("--effects", effects_path, "effects-of-interest JSON (array of index arrays)");
    dec->add_option("--max-order", max_order, "enumerate all terms up to this level instead");
    dec->add_option("--ensemble", ensemble_members, "ensemble size R");
    dec->add_option("--seed", seed, "base seed");
    dec->add_option("--out", out_dir, "output directory")->required();
    dec->add_flag("--standardize", do_standardize, "standardize feature columns first");
    dec->add_flag("--save-models", save_models, "write member checkpoints");
    dec_tf.add_to(dec);

    // experiment
    auto* exp = app.add_subcommand("experiment", "synthetic-scenario reproduction run");
    int scenario = 1, replicates = 10;
    Eigen::Index n = 2000, n_ref = 100000;
    uint64_t exp_seed = 7, ref_seed = 1;
    std::string exp_out;
    TrainFlags exp_tf;
    exp->add_option("--scenario", scenario, "scenario 1, 2 or 3")->required();
    exp->add_option("--n", n, "replicate sample size");
    exp->add_option("--replicates", replicates, "number of independent replicates");
    exp->add_option("--ensemble", ensemble_members, "ensemble size R");
    exp->add_option("--seed", exp_seed, "experiment seed");
    exp->add_option("--n-ref", n_ref, "reference sample size");
    exp->add_option("--ref-seed", ref_seed, "reference sample seed");
    exp->add_option("--out", exp_out, "output directory")->required();
    exp_tf.add_to(exp);

    // oracle
    auto* ora = app.add_subcommand("oracle", "build and store the reference decomposition");
    int ora_scenario = 1;
    Eigen::Index ora_n_ref = 100000;
    uint64_t ora_seed = 1;
    std::string ora_out;
    ora->add_option("--scenario", ora_scenario, "scenario 1, 2 or 3")->required();
    ora->add_option("--n-ref", ora_n_ref, "reference sample size");
    ora->add_option("--seed", ora_seed, "reference sample seed");
    ora->add_option("--out", ora_out, "output directory")->required();

    // metrics
    auto* met = app.add_subcommand("metrics", "recompute metrics from a stored decomposition");
    std::string met_result, met_out;
    met->add_option("--result", met_result, "decomposition directory")->required();
    met->add_option("--out", met_out, "write recomputed metrics.csv here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    int threads = resolve_threads(threads_flag);
    try {
        if (*dec)
            return cmd_decompose(input, pred_col, effects_path, max_order, ensemble_members, seed,
                                 out_dir, do_standardize, dec_tf, threads, command_line, save_models);
        if (*exp)
            return cmd_experiment(scenario, n, replicates, ensemble_members, exp_seed, n_ref,
                                  ref_seed, exp_out, exp_tf, threads, command_line);
        if (*ora)
            return cmd_oracle(ora_scenario, ora_n_ref, ora_seed, ora_out, threads, command_line);
        if (*met) return cmd_metrics(met_result, met_out, command_line, threads);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
