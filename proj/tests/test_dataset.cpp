#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stackdec/dataset.hpp"
#include "stackdec/scenario.hpp"

using namespace stackdec;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = fs::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path.string();
}

}  // namespace

TEST_CASE("load_csv parses and validates") {
    SECTION("three rows, two features") {
        auto p = write_temp("sd_ok.csv", "x1,x2,pred\n1,2,3\n4,5,6\n7,8,9\n");
        auto s = load_csv(p, "pred");
        REQUIRE(s.n() == 3);
        REQUIRE(s.d() == 2);
        REQUIRE(s.F[1] == 6.0);
        REQUIRE(s.X(2, 0) == 7.0);
        REQUIRE(s.names == std::vector<std::string>{"x1", "x2"});
    }
    SECTION("prediction column kept out of X regardless of position") {
        auto p = write_temp("sd_mid.csv", "a,pred,b\n1,10,2\n3,20,4\n");
        auto s = load_csv(p, "pred");
        REQUIRE(s.d() == 2);
        REQUIRE(s.F[0] == 10.0);
        REQUIRE(s.X(1, 1) == 4.0);
    }
    SECTION("blank cell names row and column") {
        auto p = write_temp("sd_blank.csv", "x1,pred\n1,2\n,3\n");
        REQUIRE_THROWS_WITH(load_csv(p, "pred"),
                            Catch::Matchers::ContainsSubstring("row 2") &&
                                Catch::Matchers::ContainsSubstring("x1"));
    }
    SECTION("non-numeric cell rejected") {
        auto p = write_temp("sd_text.csv", "x1,pred\nfoo,2\n");
        REQUIRE_THROWS_AS(load_csv(p, "pred"), ValidationError);
    }
    SECTION("non-finite rejected") {
        auto p = write_temp("sd_inf.csv", "x1,pred\ninf,2\n");
        REQUIRE_THROWS_AS(load_csv(p, "pred"), ValidationError);
    }
    SECTION("prediction-only file rejected") {
        auto p = write_temp("sd_only.csv", "pred\n1\n2\n");
        REQUIRE_THROWS_WITH(load_csv(p, "pred"),
                            Catch::Matchers::ContainsSubstring("at least one feature"));
    }
    SECTION("missing prediction column") {
        auto p = write_temp("sd_miss.csv", "x1,x2\n1,2\n");
        REQUIRE_THROWS_AS(load_csv(p, "y"), ValidationError);
    }
    SECTION("save/load round trip is exact") {
        SampleSet s;
        s.X = Matrix::Random(5, 3);
        s.F = Vector::Random(5);
        s.names = {"a", "b", "c"};
        auto p = (fs::temp_directory_path() / "sd_rt.csv").string();
        save_csv(s, p, "pred");
        auto back = load_csv(p, "pred");
        REQUIRE((back.X - s.X).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((back.F - s.F).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("standardize") {
    SECTION("already standardized column is a fixed point") {
        SampleSet s;
        s.X.resize(4, 1);
        s.X << -1.1618950038622251, -0.38729833462074170, 0.38729833462074170, 1.1618950038622251;
        s.F = Vector::Zero(4);
        auto [out, rec] = standardize(s);
        REQUIRE((out.X - s.X).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("constant column errors with its name") {
        SampleSet s;
        s.X.resize(3, 2);
        s.X << 1, 5, 2, 5, 3, 5;
        s.F = Vector::Zero(3);
        s.names = {"good", "flat"};
        REQUIRE_THROWS_WITH(standardize(s), Catch::Matchers::ContainsSubstring("flat"));
    }
    SECTION("two-point column under the sample-sd convention") {
        SampleSet s;
        s.X.resize(2, 1);
        s.X << 0.0, 2.0;
        s.F = Vector::Zero(2);
        auto [out, rec] = standardize(s);
        REQUIRE(out.X(0, 0) == Catch::Approx(-0.70710678118654752).margin(1e-15));
        REQUIRE(out.X(1, 0) == Catch::Approx(0.70710678118654752).margin(1e-15));
        REQUIRE(rec.to_original(0, out.X(0, 0)) == Catch::Approx(0.0).margin(1e-14));
    }
    SECTION("F untouched") {
        SampleSet s;
        s.X = Matrix::Random(10, 2);
        s.F = Vector::Random(10);
        auto [out, rec] = standardize(s);
        REQUIRE((out.F - s.F).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("gen_features: copula sampler") {
    SECTION("deterministic per seed, distinct across seeds") {
        ScenarioSpec spec{1, 200, 123, 0.5};
        auto a = gen_features(spec);
        auto b = gen_features(spec);
        REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
        spec.seed = 124;
        auto c = gen_features(spec);
        REQUIRE((a - c).cwiseAbs().maxCoeff() > 0.0);
    }
    SECTION("range is the open interval (-3, 3) and zero maps to zero") {
        ScenarioSpec spec{1, 2000, 7, 0.5};
        auto x = gen_features(spec);
        REQUIRE(x.minCoeff() > -3.0);
        REQUIRE(x.maxCoeff() < 3.0);
        REQUIRE(6.0 * (norm_cdf(0.0) - 0.5) == 0.0);
    }
    SECTION("marginals are Uniform(-3,3): KS statistic below 0.02 at n=10000") {
        ScenarioSpec spec{1, 10000, 11, 0.5};
        auto x = gen_features(spec);
        for (int col : {0, 4, 9}) {
            std::vector<double> v(10000);
            for (int i = 0; i < 10000; ++i) v[static_cast<size_t>(i)] = x(i, col);
            std::sort(v.begin(), v.end());
            double ks = 0.0;
            for (size_t i = 0; i < v.size(); ++i) {
                double cdf = (v[i] + 3.0) / 6.0;
                double lo = static_cast<double>(i) / v.size();
                double hi = static_cast<double>(i + 1) / v.size();
                ks = std::max({ks, std::abs(cdf - lo), std::abs(cdf - hi)});
            }
            REQUIRE(ks < 0.02);
        }
    }
    SECTION("pairwise correlation matches an independent Monte-Carlo oracle") {
        // oracle: xorshift + polar-method normals through the same copula map;
        // closed form for this transform is (6/pi)*asin(rho/2) = 0.48258...
        const int n = 100000;
        oracle::AltRng alt(987654321);
        double l21 = 0.5, l22 = std::sqrt(1.0 - 0.25);
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < n; ++i) {
            double e1 = alt.normal(), e2 = alt.normal();
            double z1 = e1, z2 = l21 * e1 + l22 * e2;
            double u = 6.0 * (oracle::erfc_cdf(z1) - 0.5);
            double v = 6.0 * (oracle::erfc_cdf(z2) - 0.5);
            sx += u; sy += v; sxx += u * u; syy += v * v; sxy += u * v;
        }
        double oracle_corr = (sxy - sx * sy / n) /
                             std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
        REQUIRE(oracle_corr == Catch::Approx(0.48258373953099746).margin(0.006));

        ScenarioSpec spec{1, n, 31, 0.5};
        auto x = gen_features(spec);
        Vector a = x.col(0), b = x.col(1);
        double ca = (a.array() - a.mean()).matrix().dot((b.array() - b.mean()).matrix()) /
                    std::sqrt((a.array() - a.mean()).square().sum() *
                              (b.array() - b.mean()).square().sum());
        REQUIRE(ca == Catch::Approx(oracle_corr).margin(0.01));
    }
}

TEST_CASE("scenario effect closed forms") {
    SECTION("paper spot values") {
        double x0 = 0.0;
        REQUIRE(scenario_effect(1, EffectIndex({1}), &x0) == 1.0);  // cos(0)
        double x1 = 1.0;
        REQUIRE(scenario_effect(3, EffectIndex({3}), &x1) == -1.0);  // -x^3
    }
    SECTION("ten-way fixed point at product 1000") {
        double x[10];
        for (int j = 0; j < 10; ++j) x[j] = (j % 2 ? -1.0 : 1.0) * 1.9952623149688796;
        REQUIRE(tenway_effect(x) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("frozen hand-evaluated values") {
        double p[2];
        p[0] = 1.0;
        REQUIRE(scenario_effect(1, EffectIndex({3}), p) ==
                Catch::Approx(0.36959362725786802).margin(1e-15));
        p[0] = -0.25;
        REQUIRE(scenario_effect(2, EffectIndex({2}), p) ==
                Catch::Approx(0.60653065971263342).margin(1e-15));
        p[0] = 2.0;
        REQUIRE(scenario_effect(2, EffectIndex({2}), p) ==
                Catch::Approx(0.0040255515348301421).margin(1e-15));
        p[0] = 1.0;
        REQUIRE(scenario_effect(2, EffectIndex({1}), p) ==
                Catch::Approx(-1.6209069176044192).margin(1e-14));
        p[0] = 1.0;
        p[1] = -1.0;
        REQUIRE(scenario_effect(3, EffectIndex({2, 3}), p) ==
                Catch::Approx(-0.14545472395249286).margin(1e-14));
        p[0] = 1.0;
        p[1] = 2.0;
        REQUIRE(scenario_effect(1, EffectIndex({1, 2}), p) ==
                Catch::Approx(0.89854222959027579).margin(1e-14));
    }
    SECTION("unknown effect rejected") {
        double x0 = 0.0;
        (void)x0;
        double xs[2] = {0.0, 0.0};
        REQUIRE_THROWS_AS(scenario_effect(1, EffectIndex({4}), xs), ValidationError);
        REQUIRE_THROWS_AS(scenario_effect(2, EffectIndex({1, 4}), xs), ValidationError);
    }
}

TEST_CASE("assemble_prediction") {
    SECTION("all-zero row equals the hand-evaluated sum of the closed forms") {
        Matrix zero = Matrix::Zero(1, 10);
        // frozen oracle values: per-term closed forms evaluated independently
        REQUIRE(assemble_prediction(1, zero).F[0] ==
                Catch::Approx(2.1021278051351927).margin(1e-14));
        REQUIRE(assemble_prediction(2, zero).F[0] ==
                Catch::Approx(-1.2256713404832678).margin(1e-14));
        REQUIRE(assemble_prediction(3, zero).F[0] ==
                Catch::Approx(-1.9026853619330711).margin(1e-14));
    }
    SECTION("n=1 keeps shape") {
        Matrix one = Matrix::Constant(1, 10, 0.5);
        auto s = assemble_prediction(2, one);
        REQUIRE(s.n() == 1);
        REQUIRE(s.d() == 10);
    }
    SECTION("changing x4..x10 only moves the ten-way term") {
        ScenarioSpec spec{1, 20, 5, 0.5};
        auto x = gen_features(spec);
        auto base = assemble_prediction(1, x);
        Matrix bumped = x;
        for (int j = 3; j < 10; ++j) bumped.col(j).array() += 0.1;
        bumped = bumped.cwiseMin(2.999).cwiseMax(-2.999);
        auto moved = assemble_prediction(1, bumped);
        for (int i = 0; i < 20; ++i) {
            double delta_f = moved.F[i] - base.F[i];
            double delta_ten = scenario_effect_row(1, EffectIndex::full(10), bumped.row(i)) -
                               scenario_effect_row(1, EffectIndex::full(10), x.row(i));
            REQUIRE(delta_f == Catch::Approx(delta_ten).margin(1e-12));
        }
    }
    SECTION("row sums equal the sum of scenario_effect evaluations") {
        ScenarioSpec spec{3, 50, 17, 0.5};
        auto x = gen_features(spec);
        auto s = assemble_prediction(3, x);
        auto terms = scenario_interest_terms();
        for (int i = 0; i < 50; ++i) {
            double acc = scenario_effect_row(3, EffectIndex::full(10), x.row(i));
            for (const auto& t : terms) acc += scenario_effect_row(3, t, x.row(i));
            REQUIRE(s.F[i] == Catch::Approx(acc).margin(1e-12));
        }
    }
}
