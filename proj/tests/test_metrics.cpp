#include <catch2/catch_amalgamated.hpp>

#include "stackdec/metrics.hpp"
#include "stackdec/rng.hpp"

using namespace stackdec;

namespace {

EffectVectors bare(EffectSet set, std::vector<Vector> vectors, double intercept) {
    EffectVectors ev;
    ev.set = std::move(set);
    ev.vectors = std::move(vectors);
    ev.intercept = intercept;
    ev.records.resize(ev.vectors.size());
    return ev;
}

}  // namespace

TEST_CASE("level_fraction") {
    SECTION("single main effect equal to surrogate minus mu gives I_1 = 1") {
        Vector f(5);
        f << -2, -1, 0, 1, 2;
        auto ev = bare(enumerate_full(1), {f}, 3.0);
        REQUIRE(level_fraction(ev, 1, Denominator::Surrogate) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("levels must exist") {
        Vector f(4);
        f << 1, -1, 2, -2;
        auto ev = bare(enumerate_full(1), {f}, 0.0);
        REQUIRE_THROWS_AS(level_fraction(ev, 2, Denominator::Surrogate), ValidationError);
    }
    SECTION("fractions over the surrogate denominator sum to one for orthogonal levels") {
        // two orthogonal centered vectors at levels 1 and 2
        Vector a(4), b(4);
        a << 1, -1, 1, -1;
        b << 1, 1, -1, -1;
        auto set = restrict_to({EffectIndex({1})}, 2);  // terms {1}, {1,2}
        auto ev = bare(set, {a, b}, 0.5);
        double i1 = level_fraction(ev, 1, Denominator::Surrogate);
        double i2 = level_fraction(ev, 2, Denominator::Surrogate);
        REQUIRE(i1 + i2 == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("original denominator needs F and rejects constants") {
        Vector f(4);
        f << 1, -1, 2, -2;
        auto ev = bare(enumerate_full(1), {f}, 0.0);
        REQUIRE_THROWS_AS(level_fraction(ev, 1, Denominator::Original), ValidationError);
        Vector constant = Vector::Constant(4, 7.0);
        REQUIRE_THROWS_WITH(level_fraction(ev, 1, Denominator::Original, &constant),
                            Catch::Matchers::ContainsSubstring("constant prediction function"));
    }
    SECTION("invariant under row permutation") {
        Rng rng(1);
        Vector a(8), b(8), f(8);
        for (int i = 0; i < 8; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
            f[i] = rng.normal();
        }
        auto set = restrict_to({EffectIndex({1})}, 2);
        auto ev = bare(set, {a, b}, 0.0);
        double before = level_fraction(ev, 1, Denominator::Original, &f);
        std::vector<int> perm{4, 2, 7, 0, 6, 1, 3, 5};
        Vector ap(8), bp(8), fp(8);
        for (int i = 0; i < 8; ++i) {
            ap[i] = a[perm[static_cast<size_t>(i)]];
            bp[i] = b[perm[static_cast<size_t>(i)]];
            fp[i] = f[perm[static_cast<size_t>(i)]];
        }
        auto evp = bare(set, {ap, bp}, 0.0);
        REQUIRE(level_fraction(evp, 1, Denominator::Original, &fp) ==
                Catch::Approx(before).margin(1e-14));
    }
}

TEST_CASE("sobol_index") {
    SECTION("sole nonzero term among mutually orthogonal vectors gets S = 1") {
        Vector f(4), z = Vector::Zero(4);
        f << 1, -1, 2, -2;
        auto set = enumerate_full(2);
        auto ev = bare(set, {f, z, z}, 0.0);
        REQUIRE(sobol_index(ev, EffectIndex({1}), Denominator::Surrogate) ==
                Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("zero vector gets S = 0") {
        Vector f(4), z = Vector::Zero(4);
        f << 1, -1, 2, -2;
        auto ev = bare(enumerate_full(2), {f, z, z}, 0.0);
        REQUIRE(sobol_index(ev, EffectIndex({2}), Denominator::Surrogate) ==
                Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("indices telescope to one on a correlated hand-built instance") {
        // three correlated vectors; verify against direct arithmetic
        Vector a(6), b(6), c(6);
        a << 1.0, -0.5, 0.25, -1.25, 0.75, -0.25;
        b << 0.5, 0.5, -1.0, 0.0, -0.5, 0.5;
        c << -0.2, 0.4, 0.1, -0.3, 0.2, -0.2;
        auto set = enumerate_full(2);
        auto ev = bare(set, {a, b, c}, 1.0);

        double s_sum = 0.0;
        for (const auto& t : set.terms) s_sum += sobol_index(ev, t, Denominator::Surrogate);
        REQUIRE(s_sum == Catch::Approx(1.0).margin(1e-10));

        // direct arithmetic for one index
        auto cov = [](const Vector& x, const Vector& y) {
            double mx = x.mean(), my = y.mean();
            return ((x.array() - mx) * (y.array() - my)).sum() / x.size();
        };
        Vector total = a + b + c;
        double denom = cov(total, total);
        double expect = (cov(a, a) + cov(a, b) + cov(a, c)) / denom;
        REQUIRE(sobol_index(ev, EffectIndex({1}), Denominator::Surrogate) ==
                Catch::Approx(expect).margin(1e-12));
    }
    SECTION("unknown term rejected") {
        Vector f(4);
        f << 1, -1, 2, -2;
        auto ev = bare(enumerate_full(1), {f}, 0.0);
        REQUIRE_THROWS_AS(sobol_index(ev, EffectIndex({1, 2}), Denominator::Surrogate),
                          ValidationError);
    }
}

TEST_CASE("orthogonality_report") {
    SECTION("single-level set yields a 1x1 gram") {
        Vector f(4);
        f << 1, -1, 2, -2;
        auto ev = bare(enumerate_full(1), {f}, 0.0);
        auto rep = orthogonality_report(ev);
        REQUIRE(rep.gram.rows() == 1);
        REQUIRE(rep.max_offdiag == 0.0);
        REQUIRE_FALSE(rep.flagged);
    }
    SECTION("correlated level sums are flagged") {
        Vector a(4), b(4);
        a << 1, 2, 3, 4;
        b = 2.0 * a;
        auto set = restrict_to({EffectIndex({1})}, 2);
        auto ev = bare(set, {a, b}, 0.0);
        auto rep = orthogonality_report(ev);
        REQUIRE(rep.max_offdiag > 1e-6);
        REQUIRE(rep.flagged);
    }
    SECTION("gram entries are inner products over n") {
        Vector a(2), b(2);
        a << 1, 1;
        b << 2, -2;
        auto set = restrict_to({EffectIndex({1})}, 2);
        auto ev = bare(set, {a, b}, 0.0);
        auto rep = orthogonality_report(ev);
        REQUIRE(rep.gram(0, 0) == Catch::Approx(1.0));
        REQUIRE(rep.gram(0, 1) == Catch::Approx(0.0).margin(1e-14));
    }
}

TEST_CASE("fidelity") {
    Vector f(4);
    f << 1, 2, 3, 4;
    SECTION("exact surrogate gives 1") {
        auto ev = bare(enumerate_full(1), {Vector(f.array() - f.mean())}, f.mean());
        REQUIRE(fidelity(ev, f) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("mean-only surrogate gives 0") {
        auto ev = bare(enumerate_full(1), {Vector::Zero(4)}, f.mean());
        REQUIRE(fidelity(ev, f) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("constant F rejected") {
        auto ev = bare(enumerate_full(1), {Vector::Zero(4)}, 1.0);
        Vector constant = Vector::Constant(4, 1.0);
        REQUIRE_THROWS_AS(fidelity(ev, constant), ValidationError);
    }
}

TEST_CASE("compute_metrics layout") {
    Vector a(4), b(4), f(4);
    a << 1, -1, 1, -1;
    b << 1, 1, -1, -1;
    f << 2.1, 0.9, -0.1, -2.1;
    auto set = restrict_to({EffectIndex({1})}, 2);
    auto ev = bare(set, {a, b}, 0.25);
    auto tab = compute_metrics(ev, &f);
    bool has_ik_orig = false, has_sobol_surr = false, has_fid = false;
    for (const auto& row : tab.rows) {
        if (row.metric == "I_k" && row.denominator == "original") has_ik_orig = true;
        if (row.metric == "S_theta" && row.denominator == "surrogate") has_sobol_surr = true;
        if (row.metric == "fidelity_r2") has_fid = true;
    }
    REQUIRE(has_ik_orig);
    REQUIRE(has_sobol_surr);
    REQUIRE(has_fid);
}
