#pragma once

#include <Eigen/Cholesky>
#include <cmath>

#include "stackdec/dataset.hpp"
#include "stackdec/effects.hpp"
#include "stackdec/rng.hpp"

namespace stackdec {

// standard normal cdf via the complementary error function (abs error ~1e-16)
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) * 0.39894228040143267794; }

// The printed Weibull formula from the synthetic-model definition. It is the
// density of the Weibull(alpha, sigma) distribution; implemented verbatim.
inline double weibull_printed(double alpha, double sigma, double x) {
    double t = x / sigma;
    return (alpha / sigma) * std::pow(t, alpha - 1.0) * std::exp(-std::pow(t, alpha));
}

// Synthetic-data generation: 10 features with uniform marginals on [-3,3]
// coupled by a Gaussian copula with equicorrelation rho.
struct ScenarioSpec {
    int scenario = 1;    // 1, 2 or 3
    Eigen::Index n = 0;
    uint64_t seed = 0;
    double rho = 0.5;

    static constexpr int d = 10;

    void validate() const {
        if (scenario < 1 || scenario > 3)
            throw ValidationError("scenario must be 1, 2 or 3, got " + std::to_string(scenario));
        if (n < 2) throw ValidationError("scenario sample size must be >= 2");
        if (rho < 0.0 || rho >= 1.0) throw ValidationError("rho must be in [0, 1)");
    }
};

// Z rows ~ N(0, Sigma) with unit diagonal and off-diagonal rho (via Cholesky),
// then X_ij = 6 * (Phi(Z_ij) - 0.5). Bit-reproducible per seed.
inline Matrix gen_features(const ScenarioSpec& spec) {
    spec.validate();
    const int d = ScenarioSpec::d;
    Matrix sigma = Matrix::Constant(d, d, spec.rho);
    sigma.diagonal().setOnes();
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericError("equicorrelation matrix is not positive definite");
    Matrix L = llt.matrixL();

    Rng rng(spec.seed);
    Matrix X(spec.n, d);
    Vector eps(d);
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        for (int j = 0; j < d; ++j) eps[j] = rng.normal();
        Vector z = L * eps;
        for (int j = 0; j < d; ++j) X(i, j) = 6.0 * (norm_cdf(z[j]) - 0.5);
    }
    return X;
}

namespace detail {

inline double scenario1_effect(const EffectIndex& theta, const double* x) {
    const auto& id = theta.indices();
    if (theta.level() == 1) {
        switch (id[0]) {
            case 1: return std::cos(2.0 * x[0]);
            case 2: return std::tanh(0.5 * x[0]);
            case 3: return norm_pdf(x[0] - 1.5) + norm_pdf(x[0] + 1.5);
        }
    } else if (theta.level() == 2) {
        if (id[0] == 1 && id[1] == 2)
            return std::sin(1.5 * (x[0] * x[0] - x[1] * x[1]) + norm_pdf(0.5 * x[0] * x[1]));
        if (id[0] == 1 && id[1] == 3) return std::cos(x[0] + x[1]) + std::sin(x[0] * x[1]);
        if (id[0] == 2 && id[1] == 3)
            return 0.5 * std::sin((x[0] - 1.0) * (x[0] - 1.0) + (x[1] + 1.0) * (x[1] + 1.0));
    }
    throw ValidationError("effect {" + theta.key() + "} is not part of scenario 1");
}

inline double scenario2_effect(const EffectIndex& theta, const double* x) {
    const auto& id = theta.indices();
    if (theta.level() == 1) {
        switch (id[0]) {
            case 1: return -3.0 * std::cos(3.0 * x[0] - 2.0) * x[0];
            case 2:
                return x[0] >= 0.0 ? weibull_printed(3.0, 1.0, x[0]) : weibull_printed(0.5, 1.0, -x[0]);
            case 3: return x[0] * x[0];
        }
    } else if (theta.level() == 2) {
        constexpr double pi = 3.14159265358979323846;
        if (id[0] == 1 && id[1] == 2)
            return std::sin(0.75 * x[0] * x[1]) + 0.25 * std::sqrt(x[0] * x[0] + x[1] * x[1]) +
                   0.25 * std::cos((x[0] - pi) * (x[1] + pi));
        if (id[0] == 1 && id[1] == 3) return std::sin(x[0] * x[0] + x[1] * x[1]);
        if (id[0] == 2 && id[1] == 3) return std::sin(x[0] + x[1]);
    }
    throw ValidationError("effect {" + theta.key() + "} is not part of scenario 2");
}

inline double scenario3_effect(const EffectIndex& theta, const double* x) {
    const auto& id = theta.indices();
    if (theta.level() == 1) {
        switch (id[0]) {
            case 1: return std::cos(2.0 * x[0]);
            case 2: return std::tanh(x[0]);
            case 3: return -x[0] * x[0] * x[0];
        }
    } else if (theta.level() == 2) {
        constexpr double pi = 3.14159265358979323846;
        if (id[0] == 1 && id[1] == 2) return -std::cos(1.5 * x[0] - 0.75 * x[1]);
        if (id[0] == 1 && id[1] == 3) return std::cos((x[0] - pi) * (x[1] + pi));
        if (id[0] == 2 && id[1] == 3)
            return 4.0 * (norm_pdf(x[0]) / norm_pdf(0.0) - 0.5) * (norm_cdf(x[1]) - 0.5) +
                   std::sin(x[0] + x[1]);
    }
    throw ValidationError("effect {" + theta.key() + "} is not part of scenario 3");
}

}  // namespace detail

// Ten-way interaction shared by all scenarios.
inline double tenway_effect(const double* x) {
    double prod = 1.0;
    for (int j = 0; j < 10; ++j) prod *= std::abs(x[j]);
    return 2.0 * (std::pow(prod / 1000.0, 0.125) - 0.5);
}

// The Theta of the synthetic model: three main effects and three two-way
// interactions; everything else is absorbed into the ten-way term.
inline std::vector<EffectIndex> scenario_interest_terms() {
    return {EffectIndex({1}), EffectIndex({2}), EffectIndex({3}),
            EffectIndex({1, 2}), EffectIndex({1, 3}), EffectIndex({2, 3})};
}

inline EffectSet scenario_effect_set() {
    return restrict_to(scenario_interest_terms(), ScenarioSpec::d);
}

// Closed-form raw effect value; x holds the feature values of theta in index
// order (the ten-way term takes all 10).
inline double scenario_effect(int scenario, const EffectIndex& theta, const double* x) {
    if (theta.level() == 10 && theta == EffectIndex::full(10)) return tenway_effect(x);
    switch (scenario) {
        case 1: return detail::scenario1_effect(theta, x);
        case 2: return detail::scenario2_effect(theta, x);
        case 3: return detail::scenario3_effect(theta, x);
    }
    throw ValidationError("scenario must be 1, 2 or 3");
}

inline double scenario_effect_row(int scenario, const EffectIndex& theta, const Vector& row) {
    double buf[10];
    const auto& id = theta.indices();
    for (size_t k = 0; k < id.size(); ++k) buf[k] = row[id[k] - 1];
    return scenario_effect(scenario, theta, buf);
}

// Raw prediction values: sum of the six low-order effects plus the ten-way
// term, row by row (the pre-orthogonalization form of the synthetic model).
inline SampleSet assemble_prediction(int scenario, const Matrix& features) {
    if (features.cols() != ScenarioSpec::d)
        throw ValidationError("scenario features must have 10 columns");
    SampleSet s;
    s.X = features;
    s.F.resize(features.rows());
    auto terms = scenario_interest_terms();
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        Vector row = features.row(i);
        double f = 0.0;
        for (const auto& t : terms) f += scenario_effect_row(scenario, t, row);
        f += scenario_effect_row(scenario, EffectIndex::full(10), row);
        s.F[i] = f;
    }
    for (int j = 1; j <= ScenarioSpec::d; ++j) s.names.push_back("x" + std::to_string(j));
    s.validate();
    return s;
}

inline SampleSet make_scenario_samples(const ScenarioSpec& spec) {
    return assemble_prediction(spec.scenario, gen_features(spec));
}

}  // namespace stackdec
