#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stackdec/nam.hpp"
#include "stackdec/ortho.hpp"
#include "stackdec/threading.hpp"

namespace stackdec {

struct EnsembleConfig {
    int members = 10;  // R
    uint64_t base_seed = 0;
    TrainConfig train;
    SubNetworkConfig subnet;
    int parallelism = 1;

    void validate() const {
        if (members < 1) throw ValidationError("ensemble needs at least one member");
        train.validate();
        subnet.validate();
    }

    uint64_t member_seed(int r) const { return derive_seed(base_seed, static_cast<uint64_t>(r)); }
};

struct MemberResult {
    std::shared_ptr<const NamModel> model;
    FitReport fit_report;
    EffectVectors orthogonalized;
};

struct DecompositionResult {
    EffectSet effect_set;
    EffectVectors final_vectors;          // after the final single-column pass
    std::vector<MemberResult> members;    // in member-index order
    Vector averaged_surrogate;            // mean of member surrogates on the sample
    std::vector<double> member_r2;
    std::vector<std::string> warnings;
    std::vector<double> term_spread;      // rms across-member sd per term

    double intercept() const { return final_vectors.intercept; }
    Eigen::Index n() const { return final_vectors.n(); }
};

// Orthogonalized effect vectors for one fitted NAM: per-term penultimate
// bases, initial coefficients w_theta, initial intercept 0.
inline EffectVectors orthogonalize_member(std::shared_ptr<const NamModel> model, const Matrix& X,
                                          const OrthoOptions& opts = {}) {
    const auto& set = model->effect_set;
    std::vector<std::shared_ptr<const TermBasis>> bases;
    std::vector<Vector> coeffs;
    bases.reserve(set.terms.size());
    for (size_t t = 0; t < set.terms.size(); ++t) {
        bases.push_back(std::make_shared<SubnetBasis>(model, set.terms[t], X));
        coeffs.push_back(model->subnets[t].out_w);
    }
    return orthogonalize(set, std::move(bases), coeffs, opts);
}

// Remark-1 final pass: re-orthogonalize the averaged vectors, each acting as
// its own single-column basis (plus the intercept ones column). `evaluators`
// supply off-sample values of the averaged vectors; batch evaluators are
// optional.
inline EffectVectors final_pass(const EffectSet& set, const std::vector<Vector>& averaged,
                                const std::vector<ColumnBasis::Evaluator>& evaluators,
                                double averaged_intercept, const OrthoOptions& base_opts = {},
                                const std::vector<ColumnBasis::BatchEvaluator>& batch_evaluators = {}) {
    if (averaged.size() != set.terms.size() || evaluators.size() != set.terms.size())
        throw ValidationError("averaged vectors must align with the effect set terms");
    Eigen::Index n = averaged.empty() ? 0 : averaged[0].size();
    if (n < static_cast<Eigen::Index>(set.terms.size()) + 1)
        throw ValidationError("final pass needs n >= term count + 1");
    std::vector<std::shared_ptr<const TermBasis>> bases;
    std::vector<Vector> coeffs;
    for (size_t t = 0; t < set.terms.size(); ++t) {
        ColumnBasis::BatchEvaluator be =
            t < batch_evaluators.size() ? batch_evaluators[t] : ColumnBasis::BatchEvaluator{};
        bases.push_back(std::make_shared<ColumnBasis>(averaged[t], evaluators[t], std::move(be)));
        coeffs.push_back(Vector::Ones(1));
    }
    OrthoOptions opts = base_opts;
    opts.initial_intercept = averaged_intercept;
    return orthogonalize(set, std::move(bases), coeffs, opts);
}

// Remark-1 stabilization: fit R NAMs with seeds derived from base_seed,
// orthogonalize each, average per term, then run the final single-column
// orthogonalization pass. Members train concurrently; the reduction is in
// member-index order, so results do not depend on scheduling.
inline DecompositionResult decompose(const SampleSet& samples, const EffectSet& set,
                                     const EnsembleConfig& cfg) {
    cfg.validate();
    samples.validate();
    if (samples.d() != set.d) throw ValidationError("sample dimension does not match the effect set");

    DecompositionResult result;
    result.effect_set = set;
    result.members.resize(static_cast<size_t>(cfg.members));

    parallel_for(cfg.members, cfg.parallelism, [&](int r) {
        auto model = std::make_shared<NamModel>(init_nam(set, cfg.subnet, cfg.member_seed(r)));
        TrainConfig tc = cfg.train;
        tc.seed = cfg.member_seed(r);
        FitReport rep = fit(*model, samples, tc);
        auto& slot = result.members[static_cast<size_t>(r)];
        slot.model = model;
        slot.fit_report = rep;
        slot.orthogonalized = orthogonalize_member(model, samples.X);
    });

    int reached = 0;
    bool any_zero_variance = false;
    for (int r = 0; r < cfg.members; ++r) {
        const auto& rep = result.members[static_cast<size_t>(r)].fit_report;
        result.member_r2.push_back(rep.final_r2);
        if (rep.zero_target_variance) {
            any_zero_variance = true;
            result.warnings.push_back("member " + std::to_string(r) + ": target has zero variance");
        } else if (rep.final_r2 < cfg.train.r2_target) {
            result.warnings.push_back("member " + std::to_string(r) + ": training R^2 " +
                                      std::to_string(rep.final_r2) + " below target " +
                                      std::to_string(cfg.train.r2_target) + " (member retained)");
        } else {
            ++reached;
        }
    }
    if (reached == 0 && !any_zero_variance)
        throw NumericError("no ensemble member reached the training R^2 target " +
                           std::to_string(cfg.train.r2_target));

    // plain arithmetic mean per term, then the final orthogonalization pass
    const auto T = set.terms.size();
    const double inv_r = 1.0 / static_cast<double>(cfg.members);
    std::vector<Vector> averaged(T, Vector::Zero(samples.n()));
    double averaged_intercept = 0.0;
    for (const auto& m : result.members) {
        for (size_t t = 0; t < T; ++t) averaged[t] += m.orthogonalized.vectors[t];
        averaged_intercept += m.orthogonalized.intercept;
    }
    for (auto& v : averaged) v *= inv_r;
    averaged_intercept *= inv_r;

    result.term_spread.assign(T, 0.0);
    if (cfg.members > 1) {
        for (size_t t = 0; t < T; ++t) {
            double acc = 0.0;
            for (const auto& m : result.members)
                acc += (m.orthogonalized.vectors[t] - averaged[t]).squaredNorm();
            result.term_spread[t] =
                std::sqrt(acc / (static_cast<double>(cfg.members - 1) * static_cast<double>(samples.n())));
        }
    }

    result.averaged_surrogate = Vector::Constant(samples.n(), averaged_intercept);
    for (const auto& v : averaged) result.averaged_surrogate += v;

    // off-sample evaluators of the averaged vectors: mean of member evaluators
    std::vector<std::shared_ptr<const EffectVectors>> member_effects;
    for (const auto& m : result.members)
        member_effects.push_back(std::make_shared<EffectVectors>(m.orthogonalized));
    std::vector<ColumnBasis::Evaluator> evaluators;
    std::vector<ColumnBasis::BatchEvaluator> batch_evaluators;
    for (size_t t = 0; t < T; ++t) {
        evaluators.push_back([member_effects, t, inv_r](const Vector& x) {
            double v = 0.0;
            for (const auto& me : member_effects) v += me->evaluate_term(static_cast<int>(t), x);
            return v * inv_r;
        });
        batch_evaluators.push_back([member_effects, t, inv_r](const Matrix& rows) {
            Vector v = Vector::Zero(rows.rows());
            for (const auto& me : member_effects)
                v += me->evaluate_term_batch(static_cast<int>(t), rows);
            return Vector(v * inv_r);
        });
    }
    result.final_vectors =
        final_pass(set, averaged, evaluators, averaged_intercept, {}, batch_evaluators);
    return result;
}

}  // namespace stackdec
