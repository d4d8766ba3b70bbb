#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stackdec/ensemble.hpp"
#include "stackdec/io.hpp"
#include "stackdec/metrics.hpp"
#include "stackdec/scenario.hpp"

namespace stackdec {

// The true decomposition the method should recover: the raw closed-form
// scenario functions orthogonalized on a large reference sample with
// single-column bases. Because every basis has one column, each orthogonal
// function is a scalar combination of the raw functions plus a constant, so
// the reference stays evaluable in closed form anywhere on [-3,3]^10.
struct ReferenceDecomposition {
    int scenario = 0;
    uint64_t seed = 0;
    Eigen::Index n_ref = 0;
    EffectSet set;      // the six effects of interest plus the ten-way absorber
    Matrix coef;        // T x T: weight of raw function u in orthogonalized term t
    Vector constant;    // T: subtracted constant per term
    double intercept = 0.0;

    // diagnostics frozen at build time (reference-sample values)
    double i1 = 0.0, i2 = 0.0;          // original-denominator level fractions
    double max_offdiag = 0.0;

    Matrix raw_columns(const Matrix& rows) const {
        Matrix g(rows.rows(), set.term_count());
        for (int u = 0; u < set.term_count(); ++u)
            for (Eigen::Index i = 0; i < rows.rows(); ++i)
                g(i, u) = scenario_effect_row(scenario, set.terms[static_cast<size_t>(u)], rows.row(i));
        return g;
    }

    double evaluate_term(int t, const Vector& x) const {
        double v = -constant[t];
        for (int u = 0; u < set.term_count(); ++u) {
            if (coef(t, u) == 0.0) continue;
            v += coef(t, u) * scenario_effect_row(scenario, set.terms[static_cast<size_t>(u)], x);
        }
        return v;
    }

    Vector evaluate_term_batch(int t, const Matrix& rows) const {
        return (raw_columns(rows) * coef.row(t).transpose()).array() - constant[t];
    }

    double evaluate_f(const Vector& x) const {
        double v = intercept;
        for (int t = 0; t < set.term_count(); ++t) v += evaluate_term(t, x);
        return v;
    }

    Vector evaluate_f_batch(const Matrix& rows) const {
        Vector total_coef = coef.colwise().sum();
        double offset = intercept - constant.sum();
        return (raw_columns(rows) * total_coef).array() + offset;
    }
};

// Orthogonalize the raw scenario functions on an n_ref sample and extract the
// scalar coefficient tables.
inline ReferenceDecomposition build_reference(int scenario, Eigen::Index n_ref = 100000,
                                              uint64_t seed = 1) {
    ScenarioSpec spec{scenario, n_ref, seed, 0.5};
    Matrix X = gen_features(spec);
    EffectSet set = scenario_effect_set();

    std::vector<std::shared_ptr<const TermBasis>> bases;
    std::vector<Vector> coeffs;
    for (const auto& theta : set.terms) {
        Vector col(n_ref);
        for (Eigen::Index i = 0; i < n_ref; ++i)
            col[i] = scenario_effect_row(scenario, theta, X.row(i));
        auto eval = [scenario, theta](const Vector& x) {
            return scenario_effect_row(scenario, theta, x);
        };
        bases.push_back(std::make_shared<ColumnBasis>(std::move(col), eval));
        coeffs.push_back(Vector::Ones(1));
    }
    EffectVectors ev = orthogonalize(set, std::move(bases), coeffs);

    ReferenceDecomposition ref;
    ref.scenario = scenario;
    ref.seed = seed;
    ref.n_ref = n_ref;
    ref.set = set;
    ref.intercept = ev.intercept;
    const int T = set.term_count();
    ref.coef = Matrix::Zero(T, T);
    ref.constant = Vector::Zero(T);
    for (int t = 0; t < T; ++t) {
        const auto& rec = ev.records[static_cast<size_t>(t)];
        ref.coef(t, t) = rec.beta[0];
        for (const auto& [other, gamma] : rec.corrections) {
            if (other < 0)
                ref.constant[t] += gamma[0];
            else
                ref.coef(t, other) -= gamma[0];
        }
        ref.constant[t] += rec.centering;
    }

    Vector raw_f = ev.surrogate_values();  // conservation: equals the raw sum
    ref.i1 = level_fraction(ev, 1, Denominator::Original, &raw_f);
    ref.i2 = level_fraction(ev, 2, Denominator::Original, &raw_f);
    ref.max_offdiag = orthogonality_report(ev).max_offdiag;
    return ref;
}

inline json reference_to_json(const ReferenceDecomposition& ref) {
    json j;
    j["format"] = "stackdec-reference";
    j["tool_version"] = kVersion;
    j["scenario"] = ref.scenario;
    j["seed"] = ref.seed;
    j["n_ref"] = ref.n_ref;
    j["terms"] = effect_set_to_json(ref.set);
    j["intercept"] = ref.intercept;
    json rows = json::array();
    for (Eigen::Index t = 0; t < ref.coef.rows(); ++t) rows.push_back(vector_to_json(ref.coef.row(t)));
    j["coef"] = std::move(rows);
    j["constant"] = vector_to_json(ref.constant);
    j["i1"] = ref.i1;
    j["i2"] = ref.i2;
    j["max_offdiag"] = ref.max_offdiag;
    return j;
}

inline ReferenceDecomposition reference_from_json(const json& j) {
    if (j.value("format", "") != "stackdec-reference")
        throw ValidationError("not a stackdec reference file");
    ReferenceDecomposition ref;
    ref.scenario = j.at("scenario").get<int>();
    ref.seed = j.at("seed").get<uint64_t>();
    ref.n_ref = j.at("n_ref").get<Eigen::Index>();
    ref.set = scenario_effect_set();
    ref.intercept = j.at("intercept").get<double>();
    const auto T = ref.set.term_count();
    ref.coef.resize(T, T);
    Eigen::Index t = 0;
    for (const auto& row : j.at("coef")) ref.coef.row(t++) = vector_from_json(row);
    ref.constant = vector_from_json(j.at("constant"));
    ref.i1 = j.at("i1").get<double>();
    ref.i2 = j.at("i2").get<double>();
    ref.max_offdiag = j.at("max_offdiag").get<double>();
    return ref;
}

inline void save_reference(const ReferenceDecomposition& ref, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << reference_to_json(ref).dump(2) << '\n';
}

inline ReferenceDecomposition load_reference(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    json j;
    in >> j;
    return reference_from_json(j);
}

struct ExperimentConfig {
    int scenario = 1;
    Eigen::Index n = 2000;
    int replicates = 10;
    uint64_t seed = 7;
    EnsembleConfig ensemble;
    Eigen::Index n_ref = 100000;
    uint64_t ref_seed = 1;

    uint64_t feature_seed(int rep) const { return derive_seed(seed, 2 * static_cast<uint64_t>(rep)); }
    uint64_t ensemble_seed(int rep) const { return derive_seed(seed, 2 * static_cast<uint64_t>(rep) + 1); }
};

struct ReplicateResult {
    uint64_t feature_seed = 0;
    uint64_t ensemble_seed = 0;
    SampleSet samples;
    DecompositionResult decomposition;
    double i1_original = 0.0, i2_original = 0.0;
    double i1_surrogate = 0.0, i2_surrogate = 0.0;
    double fidelity_r2 = 0.0;
    std::vector<double> term_rmse;              // vs reference at the sample points
    std::vector<double> term_corr;
    std::vector<Vector> reference_at_samples;   // per term
};

struct ExperimentReport {
    ExperimentConfig config;
    ReferenceDecomposition reference;
    std::vector<ReplicateResult> replicates;
    double mean_i1 = 0.0, mean_i2 = 0.0;              // original denominator
    double member_target_share = 0.0;                 // fraction of members at the R^2 target
};

// Replicate protocol: sample features from the copula, generate F from the
// orthogonalized reference functions (never the raw sum), decompose with the
// six effects of interest, and compare per-term estimates to the reference at
// the replicate's own sample points.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const ReferenceDecomposition& ref) {
    if (cfg.replicates < 1) throw ValidationError("experiment needs at least one replicate");
    if (ref.scenario != cfg.scenario)
        throw ValidationError("reference decomposition belongs to a different scenario");
    ExperimentReport report;
    report.config = cfg;
    report.reference = ref;
    report.replicates.resize(static_cast<size_t>(cfg.replicates));

    EffectSet set = scenario_effect_set();
    int members_total = 0, members_ok = 0;
    for (int r = 0; r < cfg.replicates; ++r) {
        auto& rr = report.replicates[static_cast<size_t>(r)];
        rr.feature_seed = cfg.feature_seed(r);
        rr.ensemble_seed = cfg.ensemble_seed(r);

        ScenarioSpec spec{cfg.scenario, cfg.n, rr.feature_seed, 0.5};
        rr.samples.X = gen_features(spec);
        rr.samples.F = ref.evaluate_f_batch(rr.samples.X);
        for (int jcol = 1; jcol <= ScenarioSpec::d; ++jcol)
            rr.samples.names.push_back("x" + std::to_string(jcol));

        EnsembleConfig ec = cfg.ensemble;
        ec.base_seed = rr.ensemble_seed;
        rr.decomposition = decompose(rr.samples, set, ec);

        const auto& ev = rr.decomposition.final_vectors;
        rr.i1_original = level_fraction(ev, 1, Denominator::Original, &rr.samples.F);
        rr.i2_original = level_fraction(ev, 2, Denominator::Original, &rr.samples.F);
        rr.i1_surrogate = level_fraction(ev, 1, Denominator::Surrogate);
        rr.i2_surrogate = level_fraction(ev, 2, Denominator::Surrogate);
        rr.fidelity_r2 = fidelity(ev, rr.samples.F);

        for (int t = 0; t < set.term_count(); ++t) {
            Vector ref_vals = ref.evaluate_term_batch(t, rr.samples.X);
            const Vector& est = ev.vectors[static_cast<size_t>(t)];
            rr.term_rmse.push_back(std::sqrt((est - ref_vals).squaredNorm() /
                                             static_cast<double>(cfg.n)));
            rr.term_corr.push_back(pearson(est, ref_vals));
            rr.reference_at_samples.push_back(std::move(ref_vals));
        }

        report.mean_i1 += rr.i1_original;
        report.mean_i2 += rr.i2_original;
        for (double r2 : rr.decomposition.member_r2) {
            ++members_total;
            if (r2 >= ec.train.r2_target) ++members_ok;
        }
    }
    report.mean_i1 /= cfg.replicates;
    report.mean_i2 /= cfg.replicates;
    report.member_target_share =
        members_total == 0 ? 0.0 : static_cast<double>(members_ok) / members_total;
    return report;
}

inline json experiment_report_to_json(const ExperimentReport& rep) {
    json j;
    j["format"] = "stackdec-experiment";
    j["tool_version"] = kVersion;
    j["scenario"] = rep.config.scenario;
    j["n"] = rep.config.n;
    j["replicates"] = rep.config.replicates;
    j["seed"] = rep.config.seed;
    j["ensemble_members"] = rep.config.ensemble.members;
    j["reference"] = json{{"seed", rep.reference.seed},
                          {"n_ref", rep.reference.n_ref},
                          {"i1", rep.reference.i1},
                          {"i2", rep.reference.i2}};
    j["mean_i1"] = rep.mean_i1;
    j["mean_i2"] = rep.mean_i2;
    j["member_target_share"] = rep.member_target_share;
    json reps = json::array();
    for (const auto& rr : rep.replicates) {
        json r;
        r["feature_seed"] = rr.feature_seed;
        r["ensemble_seed"] = rr.ensemble_seed;
        r["i1_original"] = rr.i1_original;
        r["i2_original"] = rr.i2_original;
        r["i1_surrogate"] = rr.i1_surrogate;
        r["i2_surrogate"] = rr.i2_surrogate;
        r["fidelity_r2"] = rr.fidelity_r2;
        r["member_r2"] = rr.decomposition.member_r2;
        r["warnings"] = rr.decomposition.warnings;
        json terms = json::array();
        const auto& set = rep.reference.set;
        for (int t = 0; t < set.term_count(); ++t)
            terms.push_back(json{{"term", set.terms[static_cast<size_t>(t)].indices()},
                                 {"rmse", rr.term_rmse[static_cast<size_t>(t)]},
                                 {"corr", rr.term_corr[static_cast<size_t>(t)]}});
        r["term_comparison"] = std::move(terms);
        reps.push_back(std::move(r));
    }
    j["replicate_results"] = std::move(reps);
    return j;
}

// Plot data behind the figure-style comparisons: per replicate and main
// effect, (x, estimated, reference) at the sample points sorted by x; per
// two-way interaction one 50x50 grid over [-3,3]^2 with the estimate averaged
// over replicates. Grid points are embedded into a full feature row with all
// off-term features at 0.
inline void export_plotdata(const ExperimentReport& rep, const std::string& dir,
                            int grid_steps = 50) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto& set = rep.reference.set;

    for (size_t r = 0; r < rep.replicates.size(); ++r) {
        const auto& rr = rep.replicates[r];
        for (int t = 0; t < set.term_count(); ++t) {
            const auto& theta = set.terms[static_cast<size_t>(t)];
            if (theta.level() != 1) continue;
            int col = theta.indices()[0] - 1;
            std::vector<Eigen::Index> order(static_cast<size_t>(rr.samples.n()));
            for (Eigen::Index i = 0; i < rr.samples.n(); ++i) order[static_cast<size_t>(i)] = i;
            std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
                return rr.samples.X(a, col) < rr.samples.X(b, col);
            });
            auto path = fs::path(dir) / ("plot_main_" + theta.key() + "_rep" + std::to_string(r) + ".csv");
            std::ofstream out(path);
            if (!out) throw ValidationError("cannot write " + path.string());
            out << "x,estimated,reference\n";
            const Vector& est = rr.decomposition.final_vectors.vectors[static_cast<size_t>(t)];
            const Vector& refv = rr.reference_at_samples[static_cast<size_t>(t)];
            for (Eigen::Index i : order)
                out << fp17(rr.samples.X(i, col)) << ',' << fp17(est[i]) << ',' << fp17(refv[i]) << '\n';
        }
    }

    for (int t = 0; t < set.term_count(); ++t) {
        const auto& theta = set.terms[static_cast<size_t>(t)];
        if (theta.level() != 2) continue;
        int ca = theta.indices()[0] - 1, cb = theta.indices()[1] - 1;
        Matrix grid_rows = Matrix::Zero(static_cast<Eigen::Index>(grid_steps) * grid_steps,
                                        ScenarioSpec::d);
        Eigen::Index row = 0;
        for (int ia = 0; ia < grid_steps; ++ia) {
            double xa = -3.0 + 6.0 * ia / (grid_steps - 1);
            for (int ib = 0; ib < grid_steps; ++ib, ++row) {
                grid_rows(row, ca) = xa;
                grid_rows(row, cb) = -3.0 + 6.0 * ib / (grid_steps - 1);
            }
        }
        Vector est_mean = Vector::Zero(grid_rows.rows());
        for (const auto& rr : rep.replicates)
            est_mean += rr.decomposition.final_vectors.evaluate_term_batch(t, grid_rows);
        est_mean /= static_cast<double>(rep.replicates.size());
        Vector ref_vals = rep.reference.evaluate_term_batch(t, grid_rows);

        auto path = fs::path(dir) / ("plot_interaction_" + theta.key() + ".csv");
        std::ofstream out(path);
        if (!out) throw ValidationError("cannot write " + path.string());
        out << "x_" << theta.indices()[0] << ",x_" << theta.indices()[1] << ",estimated,reference\n";
        for (Eigen::Index i = 0; i < grid_rows.rows(); ++i)
            out << fp17(grid_rows(i, ca)) << ',' << fp17(grid_rows(i, cb)) << ','
                << fp17(est_mean[i]) << ',' << fp17(ref_vals[i]) << '\n';
    }
}

}  // namespace stackdec
