#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "stackdec/dataset.hpp"
#include "stackdec/effects.hpp"

namespace stackdec {

// One effect term's column basis: the n x b_theta sample-space matrix plus an
// off-sample evaluator for the same b_theta columns. For a NAM term the
// columns are penultimate-layer activations; for the ensemble final pass and
// the reference decomposition they are single stored/closed-form columns.
class TermBasis {
public:
    virtual ~TermBasis() = default;
    virtual Eigen::Index cols() const = 0;
    virtual const Matrix& sample_matrix() const = 0;
    // column values at a new full feature row
    virtual Vector eval(const Vector& x_full) const = 0;
    // rows x cols column values at many new points; overridden where a batch
    // path is cheaper
    virtual Matrix eval_batch(const Matrix& x_rows) const {
        Matrix out(x_rows.rows(), cols());
        for (Eigen::Index i = 0; i < x_rows.rows(); ++i) out.row(i) = eval(x_rows.row(i));
        return out;
    }
};

// Single explicit column with a user-supplied point evaluator and an optional
// batch evaluator.
class ColumnBasis : public TermBasis {
public:
    using Evaluator = std::function<double(const Vector&)>;
    using BatchEvaluator = std::function<Vector(const Matrix&)>;

    ColumnBasis(Vector column, Evaluator eval, BatchEvaluator batch_eval = nullptr)
        : mat_(column.size(), 1), eval_(std::move(eval)), batch_eval_(std::move(batch_eval)) {
        mat_.col(0) = column;
    }

    Eigen::Index cols() const override { return 1; }
    const Matrix& sample_matrix() const override { return mat_; }
    Vector eval(const Vector& x_full) const override {
        Vector v(1);
        v[0] = eval_(x_full);
        return v;
    }
    Matrix eval_batch(const Matrix& x_rows) const override {
        if (!batch_eval_) return TermBasis::eval_batch(x_rows);
        Matrix out(x_rows.rows(), 1);
        out.col(0) = batch_eval_(x_rows);
        return out;
    }

private:
    Matrix mat_;
    Evaluator eval_;
    BatchEvaluator batch_eval_;
};

// Fixed matrix basis for sample-space-only work (tests, diagnostics). eval is
// unavailable.
class MatrixBasis : public TermBasis {
public:
    explicit MatrixBasis(Matrix m) : mat_(std::move(m)) {}
    Eigen::Index cols() const override { return mat_.cols(); }
    const Matrix& sample_matrix() const override { return mat_; }
    Vector eval(const Vector&) const override {
        throw ValidationError("matrix basis has no off-sample evaluator");
    }

private:
    Matrix mat_;
};

// Full-rank column subset of a concatenated basis, selected by column-pivoted
// QR: keep the first r_U pivots with |r_ii| > tol * |r_11|. Projections are
// computed from the thin QR of the selected columns; the explicit projection
// matrix is never formed.
class ProjectionBasis {
public:
    struct Range {
        Eigen::Index start = 0;
        Eigen::Index len = 0;
    };

    ProjectionBasis() = default;

    Eigen::Index n() const { return q_.rows(); }
    Eigen::Index total_cols() const { return total_cols_; }
    Eigen::Index rank() const { return q_.cols(); }
    const std::vector<Eigen::Index>& selected() const { return selected_; }
    const std::vector<Range>& ranges() const { return ranges_; }
    const Matrix& selected_columns() const { return usel_; }

    struct Projection {
        Vector fitted;
        Vector residual;
        Vector coeffs;  // length total_cols, zero at pivoted-out columns
    };

    // Least-squares fit of z onto the selected columns. One step of iterative
    // refinement keeps the residual orthogonal to the basis even when the
    // kept columns are poorly conditioned. fitted is formed as U_sel * beta so
    // that redistribution of the projection is exactly conservative.
    Projection project(const Vector& z) const {
        Projection out;
        if (z.size() != n()) throw ValidationError("projection input length mismatch");
        out.coeffs = Vector::Zero(total_cols_);
        if (rank() == 0) {
            out.fitted = Vector::Zero(z.size());
            out.residual = z;
            return out;
        }
        Vector beta = r_.triangularView<Eigen::Upper>().solve(q_.transpose() * z);
        for (int it = 0; it < 2; ++it) {
            Vector resid = z - usel_ * beta;
            beta += r_.triangularView<Eigen::Upper>().solve(q_.transpose() * resid);
        }
        out.fitted = usel_ * beta;
        out.residual = z - out.fitted;
        for (Eigen::Index k = 0; k < rank(); ++k) out.coeffs[selected_[static_cast<size_t>(k)]] = beta[k];
        return out;
    }

    Vector coeff_block(const Vector& coeffs, size_t block) const {
        const Range& r = ranges_[block];
        return coeffs.segment(r.start, r.len);
    }

    friend ProjectionBasis fullrank_subbasis(const Matrix&, const std::vector<Range>&, double);

private:
    Matrix usel_;  // n x r, original selected columns in pivot order
    Matrix q_;     // n x r
    Matrix r_;     // r x r upper triangular
    std::vector<Eigen::Index> selected_;
    std::vector<Range> ranges_;
    Eigen::Index total_cols_ = 0;
};

inline ProjectionBasis fullrank_subbasis(const Matrix& u,
                                         const std::vector<ProjectionBasis::Range>& ranges,
                                         double tol = 1e-10) {
    if (u.rows() < u.cols())
        throw ValidationError("basis needs n >= B, got n=" + std::to_string(u.rows()) +
                              ", B=" + std::to_string(u.cols()));
    Eigen::ColPivHouseholderQR<Matrix> piv(u);
    const Matrix& rmat = piv.matrixR();
    double r11 = u.cols() > 0 ? std::abs(rmat(0, 0)) : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
        if (std::abs(rmat(k, k)) > tol * r11)
            ++rank;
        else
            break;
    }
    if (rank == 0) throw ValidationError("basis has no non-zero columns");

    ProjectionBasis pb;
    pb.total_cols_ = u.cols();
    pb.ranges_ = ranges;
    pb.selected_.resize(static_cast<size_t>(rank));
    pb.usel_.resize(u.rows(), rank);
    const auto& perm = piv.colsPermutation().indices();
    for (Eigen::Index k = 0; k < rank; ++k) {
        pb.selected_[static_cast<size_t>(k)] = perm[k];
        pb.usel_.col(k) = u.col(perm[k]);
    }
    Eigen::HouseholderQR<Matrix> qr(pb.usel_);
    pb.q_ = qr.householderQ() * Matrix::Identity(u.rows(), rank);
    pb.r_ = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
    return pb;
}

struct OrthoOptions {
    double pivot_tol = 1e-10;
    double initial_intercept = 0.0;
};

// The decomposition in sample space plus the coefficient bookkeeping that
// keeps every term evaluable at new points:
//   never-processed terms:  f_theta = U_theta beta_theta - c_theta
//   actual-processed terms: f_theta = U_theta beta_theta
//                                     - sum_{theta' lower} U_theta' gamma_{theta,theta'} - c_theta
class EffectVectors {
public:
    struct TermRecord {
        Vector beta;                                    // coefficients over own columns
        std::vector<std::pair<int, Vector>> corrections;  // (term index, gamma); -1 = intercept
        double centering = 0.0;
        bool processed = false;
        int processed_level = 0;
    };

    EffectSet set;
    std::vector<std::shared_ptr<const TermBasis>> bases;  // aligned with set.terms
    std::vector<Vector> vectors;                          // final sample-space effects
    std::vector<TermRecord> records;
    double intercept = 0.0;
    int iterations = 0;  // processed levels

    Eigen::Index n() const { return vectors.empty() ? 0 : vectors[0].size(); }

    double evaluate(const EffectIndex& theta, const Vector& x_full) const {
        if (theta.is_intercept()) return intercept;
        int t = set.find(theta);
        if (t < 0) throw ValidationError("effect {" + theta.key() + "} not in the decomposition");
        return evaluate_term(t, x_full);
    }

    double evaluate_term(int t, const Vector& x_full) const {
        if (x_full.size() != set.d)
            throw ValidationError("feature row has wrong dimension for evaluation");
        const auto& rec = records[static_cast<size_t>(t)];
        double v = bases[static_cast<size_t>(t)]->eval(x_full).dot(rec.beta);
        for (const auto& [other, gamma] : rec.corrections) {
            if (other < 0)
                v -= gamma[0];
            else
                v -= bases[static_cast<size_t>(other)]->eval(x_full).dot(gamma);
        }
        return v - rec.centering;
    }

    Vector evaluate_term_batch(int t, const Matrix& x_rows) const {
        if (x_rows.cols() != set.d)
            throw ValidationError("feature rows have wrong dimension for evaluation");
        const auto& rec = records[static_cast<size_t>(t)];
        Vector v = bases[static_cast<size_t>(t)]->eval_batch(x_rows) * rec.beta;
        for (const auto& [other, gamma] : rec.corrections) {
            if (other < 0)
                v.array() -= gamma[0];
            else
                v -= bases[static_cast<size_t>(other)]->eval_batch(x_rows) * gamma;
        }
        v.array() -= rec.centering;
        return v;
    }

    double evaluate_surrogate(const Vector& x_full) const {
        double v = intercept;
        for (int t = 0; t < set.term_count(); ++t) v += evaluate_term(t, x_full);
        return v;
    }

    // sample-space surrogate values (intercept + all terms)
    Vector surrogate_values() const {
        Vector s = Vector::Constant(n(), intercept);
        for (const auto& f : vectors) s += f;
        return s;
    }

    Vector level_sum(int k) const {
        Vector s = Vector::Zero(n());
        for (int t = 0; t < set.term_count(); ++t)
            if (set.terms[static_cast<size_t>(t)].level() == k) s += vectors[static_cast<size_t>(t)];
        return s;
    }

    // rebuild a term from its representation record (invariant check)
    Vector reconstruct_term(int t) const {
        const auto& rec = records[static_cast<size_t>(t)];
        Vector v = bases[static_cast<size_t>(t)]->sample_matrix() * rec.beta;
        for (const auto& [other, gamma] : rec.corrections) {
            if (other < 0)
                v.array() -= gamma[0];
            else
                v -= bases[static_cast<size_t>(other)]->sample_matrix() * gamma;
        }
        v.array() -= rec.centering;
        return v;
    }
};

// Appendix-style post-hoc orthogonalization: iterate from the highest present
// level down to level 2; at each level project the current-level effects out
// of the span of all lower-order basis columns (intercept included) and
// redistribute the projection onto the lower-order terms; finally mean-center
// every term, moving the means into the intercept. Levels absent from the set
// are skipped (their actual sum would be the zero vector).
inline EffectVectors orthogonalize(const EffectSet& set,
                                   std::vector<std::shared_ptr<const TermBasis>> bases,
                                   const std::vector<Vector>& initial_coeffs,
                                   const OrthoOptions& opts = {}) {
    if (set.terms.empty()) throw ValidationError("effect set is empty");
    if (bases.size() != set.terms.size() || initial_coeffs.size() != set.terms.size())
        throw ValidationError("bases/coefficients must align with the effect set terms");

    const Eigen::Index n = bases[0]->sample_matrix().rows();
    EffectVectors ev;
    ev.set = set;
    ev.bases = std::move(bases);
    ev.records.resize(set.terms.size());
    ev.vectors.resize(set.terms.size());
    ev.intercept = opts.initial_intercept;
    for (size_t t = 0; t < set.terms.size(); ++t) {
        const auto& u = ev.bases[t]->sample_matrix();
        if (u.rows() != n) throw ValidationError("term bases disagree on sample count");
        if (initial_coeffs[t].size() != u.cols())
            throw ValidationError("initial coefficient length mismatch for term {" +
                                  set.terms[t].key() + "}");
        ev.records[t].beta = initial_coeffs[t];
        ev.vectors[t] = u * initial_coeffs[t];
        if (!ev.vectors[t].allFinite())
            throw NumericError("non-finite initial effect vector for term {" + set.terms[t].key() + "}");
    }

    auto levels = set.levels_present();
    for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
        const int level = *it;
        if (level < 2) break;

        std::vector<int> actual, lower;
        for (int t = 0; t < set.term_count(); ++t) {
            int l = set.terms[static_cast<size_t>(t)].level();
            if (l == level)
                actual.push_back(t);
            else if (l < level)
                lower.push_back(t);
        }

        // concatenated lower-order basis, intercept ones first
        Eigen::Index b_total = 1;
        for (int t : lower) b_total += ev.bases[static_cast<size_t>(t)]->cols();
        if (n < b_total)
            throw ValidationError("orthogonalization at level " + std::to_string(level) + " needs n >= B (n=" +
                                  std::to_string(n) + ", B=" + std::to_string(b_total) + ")");
        Matrix u(n, b_total);
        std::vector<ProjectionBasis::Range> ranges;
        u.col(0).setOnes();
        ranges.push_back({0, 1});
        Eigen::Index col = 1;
        for (int t : lower) {
            const auto& m = ev.bases[static_cast<size_t>(t)]->sample_matrix();
            u.middleCols(col, m.cols()) = m;
            ranges.push_back({col, m.cols()});
            col += m.cols();
        }
        ProjectionBasis pb = fullrank_subbasis(u, ranges, opts.pivot_tol);

        // per-term (I - P); the lower-order update uses the same fitted pieces
        Vector total_coeffs = Vector::Zero(b_total);
        for (int t : actual) {
            auto pr = pb.project(ev.vectors[static_cast<size_t>(t)]);
            if (!pr.residual.allFinite())
                throw NumericError("non-finite projection at level " + std::to_string(level));
            ev.vectors[static_cast<size_t>(t)] = pr.residual;
            auto& rec = ev.records[static_cast<size_t>(t)];
            rec.processed = true;
            rec.processed_level = level;
            rec.corrections.emplace_back(-1, pb.coeff_block(pr.coeffs, 0));
            for (size_t li = 0; li < lower.size(); ++li)
                rec.corrections.emplace_back(lower[li], pb.coeff_block(pr.coeffs, li + 1));
            total_coeffs += pr.coeffs;
        }

        ev.intercept += total_coeffs[0];
        for (size_t li = 0; li < lower.size(); ++li) {
            int t = lower[li];
            const auto& rng = pb.ranges()[li + 1];
            Vector gamma = total_coeffs.segment(rng.start, rng.len);
            ev.records[static_cast<size_t>(t)].beta += gamma;
            ev.vectors[static_cast<size_t>(t)] += ev.bases[static_cast<size_t>(t)]->sample_matrix() * gamma;
        }
        ++ev.iterations;
    }

    // center every non-intercept term; the removed means belong to the intercept
    for (int t = 0; t < set.term_count(); ++t) {
        double c = ev.vectors[static_cast<size_t>(t)].mean();
        ev.vectors[static_cast<size_t>(t)].array() -= c;
        ev.records[static_cast<size_t>(t)].centering = c;
        ev.intercept += c;
    }
    return ev;
}

inline double evaluate_effect(const EffectVectors& ev, const EffectIndex& theta, const Vector& x_full) {
    return ev.evaluate(theta, x_full);
}

}  // namespace stackdec
