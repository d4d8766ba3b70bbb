#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "stackdec/dataset.hpp"
#include "stackdec/effects.hpp"
#include "stackdec/ortho.hpp"

namespace stackdec {

enum class Denominator { Original, Surrogate };

inline std::string denominator_name(Denominator d) {
    return d == Denominator::Original ? "original" : "surrogate";
}

// population-convention sample variance (divisor n; the convention cancels in
// the variance ratios)
inline double sample_variance(const Vector& v) {
    double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size());
}

inline double sample_covariance(const Vector& a, const Vector& b) {
    double ma = a.mean(), mb = b.mean();
    return ((a.array() - ma) * (b.array() - mb)).sum() / static_cast<double>(a.size());
}

inline double pearson(const Vector& a, const Vector& b) {
    double va = sample_variance(a), vb = sample_variance(b);
    if (va == 0.0 || vb == 0.0) return 0.0;
    return sample_covariance(a, b) / std::sqrt(va * vb);
}

namespace detail {

inline double denominator_variance(const EffectVectors& ev, const Vector* original_f, Denominator den) {
    Vector base;
    if (den == Denominator::Original) {
        if (!original_f)
            throw ValidationError("original predictions required for the original denominator");
        base = *original_f;
    } else {
        base = ev.surrogate_values();
    }
    Vector shifted = base.array() - ev.intercept;
    double v = sample_variance(shifted);
    if (v == 0.0) throw ValidationError("constant prediction function: denominator variance is zero");
    return v;
}

}  // namespace detail

// Fraction of variance explained by the level-k effects (sample version).
inline double level_fraction(const EffectVectors& ev, int k, Denominator den,
                             const Vector* original_f = nullptr) {
    auto levels = ev.set.levels_present();
    if (std::find(levels.begin(), levels.end(), k) == levels.end())
        throw ValidationError("level " + std::to_string(k) + " has no effects in this decomposition");
    return sample_variance(ev.level_sum(k)) / detail::denominator_variance(ev, original_f, den);
}

// Generalized Sobol sensitivity index of one term: own variance plus the
// covariances with every other term, over the denominator variance.
inline double sobol_index(const EffectVectors& ev, const EffectIndex& theta, Denominator den,
                          const Vector* original_f = nullptr) {
    int t = ev.set.find(theta);
    if (t < 0) throw ValidationError("effect {" + theta.key() + "} not in the decomposition");
    const Vector& f = ev.vectors[static_cast<size_t>(t)];
    double num = sample_variance(f);
    for (int u = 0; u < ev.set.term_count(); ++u)
        if (u != t) num += sample_covariance(f, ev.vectors[static_cast<size_t>(u)]);
    return num / detail::denominator_variance(ev, original_f, den);
}

struct OrthogonalityReport {
    std::vector<int> levels;
    Matrix gram;             // (j,k) -> <s_j, s_k> / n
    Matrix normalized;       // cosine between level sums, 1 on the diagonal
    double max_offdiag = 0.0;
    std::vector<double> centering;  // |mean| / sd per term, 0 for zero vectors
    double max_centering = 0.0;
    bool flagged = false;    // any normalized off-diagonal above 1e-6

    static constexpr double kTolerance = 1e-6;
};

inline OrthogonalityReport orthogonality_report(const EffectVectors& ev) {
    OrthogonalityReport rep;
    rep.levels = ev.set.levels_present();
    const auto L = static_cast<Eigen::Index>(rep.levels.size());
    std::vector<Vector> sums;
    for (int k : rep.levels) sums.push_back(ev.level_sum(k));
    rep.gram.resize(L, L);
    rep.normalized.setZero(L, L);
    for (Eigen::Index a = 0; a < L; ++a) {
        for (Eigen::Index b = 0; b < L; ++b) {
            double dot = sums[static_cast<size_t>(a)].dot(sums[static_cast<size_t>(b)]);
            rep.gram(a, b) = dot / static_cast<double>(ev.n());
            double na = sums[static_cast<size_t>(a)].norm();
            double nb = sums[static_cast<size_t>(b)].norm();
            rep.normalized(a, b) = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (na * nb);
            if (a != b) rep.max_offdiag = std::max(rep.max_offdiag, std::abs(rep.normalized(a, b)));
        }
    }
    for (const auto& f : ev.vectors) {
        double sd = std::sqrt(sample_variance(f));
        double c = sd == 0.0 ? 0.0 : std::abs(f.mean()) / sd;
        rep.centering.push_back(c);
        rep.max_centering = std::max(rep.max_centering, c);
    }
    rep.flagged = rep.max_offdiag > OrthogonalityReport::kTolerance;
    return rep;
}

// coefficient of determination between the surrogate and the observed F
inline double fidelity(const EffectVectors& ev, const Vector& f) {
    if (f.size() != ev.n()) throw ValidationError("prediction vector length mismatch");
    double sst = (f.array() - f.mean()).square().sum();
    if (sst == 0.0) throw ValidationError("constant prediction function: fidelity undefined");
    double sse = (ev.surrogate_values() - f).squaredNorm();
    return 1.0 - sse / sst;
}

struct MetricRow {
    std::string metric;
    std::string key;
    double value = 0.0;
    std::string denominator;  // "original", "surrogate" or "-"
};

struct MetricsTable {
    std::vector<MetricRow> rows;

    void add(std::string metric, std::string key, double value, std::string den = "-") {
        rows.push_back({std::move(metric), std::move(key), value, std::move(den)});
    }
};

// The full metrics block for a decomposition: I_k per level and S_theta per
// term against both denominators (when F is available), plus fidelity and the
// orthogonality summary.
inline MetricsTable compute_metrics(const EffectVectors& ev, const Vector* original_f) {
    MetricsTable tab;
    std::vector<Denominator> dens{Denominator::Surrogate};
    if (original_f) dens.push_back(Denominator::Original);
    for (auto den : dens) {
        for (int k : ev.set.levels_present())
            tab.add("I_k", std::to_string(k), level_fraction(ev, k, den, original_f),
                    denominator_name(den));
        for (const auto& t : ev.set.terms)
            tab.add("S_theta", t.key(), sobol_index(ev, t, den, original_f), denominator_name(den));
        tab.add("sigma_F_sq", "-", detail::denominator_variance(ev, original_f, den),
                denominator_name(den));
    }
    if (original_f) tab.add("fidelity_r2", "-", fidelity(ev, *original_f));
    auto rep = orthogonality_report(ev);
    tab.add("orthogonality_max_offdiag", "-", rep.max_offdiag);
    tab.add("centering_max", "-", rep.max_centering);
    tab.add("intercept", "-", ev.intercept);
    return tab;
}

}  // namespace stackdec
