#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stackdec/experiments.hpp"

using namespace stackdec;
namespace fs = std::filesystem;

TEST_CASE("build_reference") {
    auto ref = build_reference(1, 4000, 3);

    SECTION("level sums are pairwise orthogonal on fresh evaluations of the reference sample") {
        // black-box check through the serialized coefficients only
        ScenarioSpec spec{1, 4000, 3, 0.5};
        Matrix X = gen_features(spec);
        Vector s1 = Vector::Zero(4000), s2 = Vector::Zero(4000), s10 = Vector::Zero(4000);
        for (int t = 0; t < ref.set.term_count(); ++t) {
            int level = ref.set.terms[static_cast<size_t>(t)].level();
            Vector v = ref.evaluate_term_batch(t, X);
            if (level == 1) s1 += v;
            else if (level == 2) s2 += v;
            else s10 += v;
        }
        REQUIRE(std::abs(s1.dot(s2)) <= 1e-6 * s1.norm() * s2.norm());
        REQUIRE(std::abs(s1.dot(s10)) <= 1e-6 * s1.norm() * s10.norm());
        REQUIRE(std::abs(s2.dot(s10)) <= 1e-6 * s2.norm() * s10.norm());
        REQUIRE(ref.max_offdiag <= 1e-6);
    }

    SECTION("orthogonalized functions plus intercept reproduce the raw sum anywhere") {
        // conservation extends off-sample because the reference is a linear
        // recombination of linearly independent raw columns
        ScenarioSpec other{1, 500, 777, 0.5};
        Matrix X = gen_features(other);
        Vector via_ref = ref.evaluate_f_batch(X);
        Vector raw = assemble_prediction(1, X).F;
        REQUIRE((via_ref - raw).cwiseAbs().maxCoeff() <= 1e-8 * raw.cwiseAbs().maxCoeff());
    }

    SECTION("raw and orthogonalized functions span the same column space") {
        ScenarioSpec spec{1, 4000, 3, 0.5};
        Matrix X = gen_features(spec);
        const size_t n = 600;  // subsample for the oracle solve
        oracle::Mat ortho_cols(static_cast<size_t>(ref.set.term_count()) + 1);
        for (int t = 0; t < ref.set.term_count(); ++t) {
            Vector v = ref.evaluate_term_batch(t, X.topRows(n));
            ortho_cols[static_cast<size_t>(t)].assign(v.data(), v.data() + n);
        }
        ortho_cols.back() = oracle::Vec(n, 1.0);
        for (int u = 0; u < ref.set.term_count(); ++u) {
            Vector raw(n);
            for (size_t i = 0; i < n; ++i)
                raw[static_cast<Eigen::Index>(i)] =
                    scenario_effect_row(1, ref.set.terms[static_cast<size_t>(u)], X.row(static_cast<Eigen::Index>(i)));
            oracle::Vec z(raw.data(), raw.data() + n);
            auto coef = oracle::normal_equations(ortho_cols, z);
            auto fit = oracle::fitted_values(ortho_cols, coef, n);
            double rss = 0.0, nrm = 0.0;
            for (size_t i = 0; i < n; ++i) {
                rss += (z[i] - fit[i]) * (z[i] - fit[i]);
                nrm += z[i] * z[i];
            }
            REQUIRE(std::sqrt(rss) <= 1e-6 * std::max(1.0, std::sqrt(nrm)));
        }
    }

    SECTION("serialization round trip") {
        auto path = (fs::temp_directory_path() / "ref_rt.json").string();
        save_reference(ref, path);
        auto back = load_reference(path);
        REQUIRE(back.scenario == ref.scenario);
        REQUIRE(back.seed == ref.seed);
        REQUIRE(back.n_ref == ref.n_ref);
        REQUIRE((back.coef - ref.coef).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((back.constant - ref.constant).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE(back.intercept == ref.intercept);
    }

    SECTION("mismatched scenario rejected by run_experiment") {
        ExperimentConfig cfg;
        cfg.scenario = 2;
        REQUIRE_THROWS_AS(run_experiment(cfg, ref), ValidationError);
    }
}

namespace {

ExperimentConfig tiny_experiment(int scenario) {
    ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.n = 300;
    cfg.replicates = 2;
    cfg.seed = 5;
    cfg.n_ref = 3000;
    cfg.ref_seed = 3;
    cfg.ensemble.members = 2;
    cfg.ensemble.parallelism = 2;
    cfg.ensemble.subnet = SubNetworkConfig::with_widths({16, 8, 4});
    cfg.ensemble.train.max_epochs = 120;
    cfg.ensemble.train.r2_target = 0.9;
    return cfg;
}

}  // namespace

TEST_CASE("run_experiment and export_plotdata") {
    auto cfg = tiny_experiment(3);
    auto ref = build_reference(cfg.scenario, cfg.n_ref, cfg.ref_seed);
    auto report = run_experiment(cfg, ref);

    SECTION("replicate structure") {
        REQUIRE(report.replicates.size() == 2);
        REQUIRE(report.replicates[0].feature_seed != report.replicates[1].feature_seed);
        REQUIRE(report.replicates[0].ensemble_seed != report.replicates[1].ensemble_seed);
        for (const auto& rr : report.replicates) {
            REQUIRE(rr.samples.n() == 300);
            REQUIRE(rr.term_rmse.size() == 7);
            REQUIRE(rr.term_corr.size() == 7);
            REQUIRE(rr.fidelity_r2 > 0.5);
            REQUIRE(rr.i1_original > 0.0);
        }
        REQUIRE(report.mean_i1 ==
                Catch::Approx(0.5 * (report.replicates[0].i1_original +
                                     report.replicates[1].i1_original)));
    }

    SECTION("the F fed to the decomposer comes from the reference, not the raw sum") {
        const auto& rr = report.replicates[0];
        Vector from_ref = ref.evaluate_f_batch(rr.samples.X);
        REQUIRE((rr.samples.F - from_ref).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("report JSON carries the replicate table") {
        json j = experiment_report_to_json(report);
        REQUIRE(j.at("replicate_results").size() == 2);
        REQUIRE(j.at("reference").at("n_ref").get<Eigen::Index>() == 3000);
        REQUIRE(j.at("replicate_results")[0].at("term_comparison").size() == 7);
    }

    SECTION("plot data files") {
        auto dir = (fs::temp_directory_path() / "sd_plots").string();
        fs::remove_all(dir);
        export_plotdata(report, dir);

        // one CSV per main effect per replicate with n data rows sorted by x
        for (int rep = 0; rep < 2; ++rep) {
            for (int j = 1; j <= 3; ++j) {
                auto p = fs::path(dir) /
                         ("plot_main_" + std::to_string(j) + "_rep" + std::to_string(rep) + ".csv");
                REQUIRE(fs::exists(p));
                std::ifstream in(p);
                std::string line;
                std::getline(in, line);
                REQUIRE(line == "x,estimated,reference");
                int rows = 0;
                double prev = -1e300;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    ++rows;
                    double x = std::stod(line.substr(0, line.find(',')));
                    REQUIRE(x >= prev);
                    prev = x;
                }
                REQUIRE(rows == 300);
            }
        }

        // gridded interaction CSVs: 2500 rows; reference column equals the
        // closed-form evaluation at the grid embedding
        for (const auto& key : {std::string("1_2"), std::string("1_3"), std::string("2_3")}) {
            auto p = fs::path(dir) / ("plot_interaction_" + key + ".csv");
            REQUIRE(fs::exists(p));
            std::ifstream in(p);
            std::string line;
            std::getline(in, line);
            int t = -1;
            for (int u = 0; u < report.reference.set.term_count(); ++u)
                if (report.reference.set.terms[static_cast<size_t>(u)].key() == key) t = u;
            REQUIRE(t >= 0);
            int rows = 0;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto c1 = line.find(',');
                auto c2 = line.find(',', c1 + 1);
                auto c3 = line.find(',', c2 + 1);
                double xa = std::stod(line.substr(0, c1));
                double xb = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
                double refv = std::stod(line.substr(c3 + 1));
                if (rows % 251 == 0) {  // spot-check a diagonal of the grid
                    Vector full = Vector::Zero(10);
                    const auto& theta = report.reference.set.terms[static_cast<size_t>(t)];
                    full[theta.indices()[0] - 1] = xa;
                    full[theta.indices()[1] - 1] = xb;
                    REQUIRE(refv == Catch::Approx(report.reference.evaluate_term(t, full)).margin(1e-10));
                }
                ++rows;
            }
            REQUIRE(rows == 2500);
        }
    }
}
