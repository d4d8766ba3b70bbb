#pragma once

#include <Eigen/Dense>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "stackdec/dataset.hpp"
#include "stackdec/effects.hpp"
#include "stackdec/ortho.hpp"
#include "stackdec/rng.hpp"

namespace stackdec {

// Subnetwork architecture: fully connected, rectifier on every hidden layer
// except the last, identity on the last hidden layer (width b_theta), linear
// scalar output without bias. Dropout applies to hidden layers 2..4 when they
// exist and are not the penultimate layer.
struct SubNetworkConfig {
    std::vector<int> hidden_widths{256, 128, 64, 32, 8};
    std::vector<double> dropout_rates{0.0, 0.2, 0.2, 0.2, 0.0};

    static SubNetworkConfig with_widths(std::vector<int> widths, double dropout = 0.2) {
        SubNetworkConfig c;
        c.hidden_widths = std::move(widths);
        size_t L = c.hidden_widths.size();
        c.dropout_rates.assign(L, 0.0);
        for (size_t i = 1; i + 1 < L && i <= 3; ++i) c.dropout_rates[i] = dropout;
        return c;
    }

    int penultimate_width() const { return hidden_widths.back(); }

    void validate() const {
        if (hidden_widths.empty()) throw ValidationError("at least one hidden layer required");
        for (int w : hidden_widths)
            if (w < 1) throw ValidationError("hidden widths must be >= 1");
        if (dropout_rates.size() != hidden_widths.size())
            throw ValidationError("dropout rate per hidden layer required");
        for (double p : dropout_rates)
            if (p < 0.0 || p >= 1.0) throw ValidationError("dropout rates must be in [0, 1)");
    }
};

struct DenseLayer {
    Matrix W;  // out x in
    Vector b;  // out
};

struct SubNetwork {
    int input_dim = 0;
    std::vector<DenseLayer> layers;  // hidden layers only
    Vector out_w;                    // b_theta; the output layer carries no bias

    int penultimate_width() const { return static_cast<int>(out_w.size()); }

    // penultimate activations for a single input point
    Vector penultimate(const Vector& x) const {
        Vector a = x;
        for (size_t l = 0; l < layers.size(); ++l) {
            Vector z = layers[l].W * a + layers[l].b;
            a = (l + 1 < layers.size()) ? z.cwiseMax(0.0).eval() : z;
        }
        return a;
    }

    double output(const Vector& x) const { return penultimate(x).dot(out_w); }
};

// One subnetwork per effect term; no global intercept (the virtual intercept
// term has U = ones and weight 0 until orthogonalization updates it).
struct NamModel {
    EffectSet effect_set;
    SubNetworkConfig config;
    std::vector<SubNetwork> subnets;  // aligned with effect_set.terms
    uint64_t seed = 0;

    const SubNetwork& subnet(const EffectIndex& theta) const {
        int t = effect_set.find(theta);
        if (t < 0) throw ValidationError("no subnetwork for effect {" + theta.key() + "}");
        return subnets[static_cast<size_t>(t)];
    }
};

namespace detail {

inline void init_subnet(SubNetwork& net, int input_dim, const SubNetworkConfig& cfg, Rng& rng) {
    net.input_dim = input_dim;
    net.layers.clear();
    int fan_in = input_dim;
    const size_t L = cfg.hidden_widths.size();
    for (size_t l = 0; l < L; ++l) {
        int out = cfg.hidden_widths[l];
        DenseLayer layer;
        layer.W.resize(out, fan_in);
        // He-style uniform fan-in scaling on rectifier layers, LeCun-style on
        // the linear penultimate layer and the output weights
        double bound = (l + 1 < L) ? std::sqrt(6.0 / fan_in) : std::sqrt(3.0 / fan_in);
        for (Eigen::Index i = 0; i < layer.W.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.W.cols(); ++j)
                layer.W(i, j) = bound * (2.0 * rng.uniform() - 1.0);
        layer.b = Vector::Zero(out);
        net.layers.push_back(std::move(layer));
        fan_in = out;
    }
    net.out_w.resize(cfg.hidden_widths.back());
    double bound = std::sqrt(3.0 / cfg.hidden_widths.back());
    for (Eigen::Index i = 0; i < net.out_w.size(); ++i)
        net.out_w[i] = bound * (2.0 * rng.uniform() - 1.0);
}

}  // namespace detail

inline NamModel init_nam(const EffectSet& set, const SubNetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (set.terms.empty()) throw ValidationError("effect set is empty");
    NamModel model;
    model.effect_set = set;
    model.config = cfg;
    model.seed = seed;
    model.subnets.resize(set.terms.size());
    for (size_t t = 0; t < set.terms.size(); ++t) {
        Rng rng(derive_seed(seed, t));
        detail::init_subnet(model.subnets[t], set.terms[t].level(), cfg, rng);
    }
    return model;
}

namespace detail {

inline Matrix term_inputs(const Matrix& X, const EffectIndex& theta) {
    Matrix out(X.rows(), theta.level());
    Eigen::Index j = 0;
    for (int idx : theta.indices()) out.col(j++) = X.col(idx - 1);
    return out;
}

// batch penultimate activations, eval mode (no dropout)
inline Matrix penultimate_batch(const SubNetwork& net, const Matrix& x_theta) {
    Matrix a = x_theta;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        Matrix z = a * net.layers[l].W.transpose();
        z.rowwise() += net.layers[l].b.transpose();
        a = (l + 1 < net.layers.size()) ? z.cwiseMax(0.0).eval() : std::move(z);
    }
    return a;
}

}  // namespace detail

struct ForwardResult {
    Vector surrogate;  // n
    Matrix per_term;   // n x T, contributions in term order
};

// Deterministic eval-mode forward pass; the surrogate is the sum of the
// per-term contributions.
inline ForwardResult forward(const NamModel& model, const Matrix& X) {
    if (X.cols() != model.effect_set.d)
        throw ValidationError("feature dimension mismatch: model expects d=" +
                              std::to_string(model.effect_set.d));
    ForwardResult r;
    const auto T = static_cast<Eigen::Index>(model.subnets.size());
    r.per_term.resize(X.rows(), T);
    for (Eigen::Index t = 0; t < T; ++t) {
        Matrix xt = detail::term_inputs(X, model.effect_set.terms[static_cast<size_t>(t)]);
        r.per_term.col(t) =
            detail::penultimate_batch(model.subnets[static_cast<size_t>(t)], xt) *
            model.subnets[static_cast<size_t>(t)].out_w;
    }
    r.surrogate = r.per_term.rowwise().sum();
    return r;
}

inline ForwardResult forward(const NamModel& model, const SampleSet& samples) {
    return forward(model, samples.X);
}

// n x b_theta penultimate matrix U_theta; for the intercept this is the ones
// column. U_theta * w_theta reproduces the forward() contribution.
inline Matrix penultimate_matrix(const NamModel& model, const Matrix& X, const EffectIndex& theta) {
    if (theta.is_intercept()) return Matrix::Ones(X.rows(), 1);
    int t = model.effect_set.find(theta);
    if (t < 0) throw ValidationError("no subnetwork for effect {" + theta.key() + "}");
    Matrix xt = detail::term_inputs(X, theta);
    return detail::penultimate_batch(model.subnets[static_cast<size_t>(t)], xt);
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 128;
    int max_epochs = 2000;
    double r2_target = 0.999;
    uint64_t seed = 0;
    bool full_batch = false;
    // Dropout keeps the eval-mode fit away from interpolation (the
    // mask-marginalized optimum trades bias for variance), so training runs
    // in two phases: with dropout until the R^2 gain stalls, then without it
    // until near-interpolation. Both phases are deterministic per seed.
    bool dropout_finetune = true;
    int finetune_patience = 30;
    double finetune_min_delta = 5e-4;
    // step-size halving on a stalled fine-tune phase
    double plateau_decay = 0.5;
    int plateau_patience = 80;
    double min_learning_rate = 1e-5;

    void validate() const {
        if (learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
        if (r2_target <= 0.0 || r2_target > 1.0) throw ValidationError("r2 target must be in (0, 1]");
        if (batch_size < 1) throw ValidationError("batch size must be >= 1");
        if (max_epochs < 1) throw ValidationError("max epochs must be >= 1");
    }
};

struct FitReport {
    double final_r2 = 0.0;
    double final_mse = 0.0;
    int epochs = 0;
    int finetune_start = 0;  // first epoch trained without dropout; 0 = never switched
    bool converged = false;
    bool zero_target_variance = false;
    std::vector<double> loss_curve;  // eval-mode MSE per epoch
};

namespace detail {

struct AdamState {
    Matrix mW, vW;
    Vector mb, vb;
};

// training state for one subnetwork: activations, masks and gradients sized
// for the largest batch
struct SubnetWorkspace {
    Matrix inputs;                 // n x |theta|
    Matrix batch_input;            // gathered rows of the current batch
    std::vector<Matrix> acts;      // per layer, batch x width (post dropout)
    std::vector<Matrix> preacts;   // per layer, batch x width
    std::vector<Matrix> masks;     // dropout masks (scaled), empty if rate 0
    std::vector<Matrix> gradW;
    std::vector<Vector> gradb;
    Vector grad_out_w;
    std::vector<AdamState> adam;
    AdamState adam_out;  // for out_w (vector stored in mb/vb)
};

class NamTrainer {
public:
    NamTrainer(NamModel& model, const Matrix& X, const Vector& F)
        : model_(model), F_(F) {
        const size_t T = model.subnets.size();
        ws_.resize(T);
        for (size_t t = 0; t < T; ++t) {
            ws_[t].inputs = term_inputs(X, model.effect_set.terms[t]);
            const auto& net = model.subnets[t];
            size_t L = net.layers.size();
            ws_[t].acts.resize(L);
            ws_[t].preacts.resize(L);
            ws_[t].masks.resize(L);
            ws_[t].gradW.resize(L);
            ws_[t].gradb.resize(L);
            ws_[t].adam.resize(L);
            for (size_t l = 0; l < L; ++l) {
                ws_[t].gradW[l].setZero(net.layers[l].W.rows(), net.layers[l].W.cols());
                ws_[t].gradb[l].setZero(net.layers[l].b.size());
                ws_[t].adam[l].mW.setZero(net.layers[l].W.rows(), net.layers[l].W.cols());
                ws_[t].adam[l].vW.setZero(net.layers[l].W.rows(), net.layers[l].W.cols());
                ws_[t].adam[l].mb.setZero(net.layers[l].b.size());
                ws_[t].adam[l].vb.setZero(net.layers[l].b.size());
            }
            ws_[t].grad_out_w.setZero(net.out_w.size());
            ws_[t].adam_out.mb.setZero(net.out_w.size());
            ws_[t].adam_out.vb.setZero(net.out_w.size());
        }
    }

    Eigen::Index n() const { return F_.size(); }

    // eval-mode MSE over the full sample
    double loss_full() {
        Vector yhat = predict_full();
        return (yhat - F_).squaredNorm() / static_cast<double>(n());
    }

    Vector predict_full() {
        Vector yhat = Vector::Zero(n());
        for (size_t t = 0; t < ws_.size(); ++t)
            yhat += penultimate_batch(model_.subnets[t], ws_[t].inputs) * model_.subnets[t].out_w;
        return yhat;
    }

    // full-batch gradients of the MSE loss, eval mode; used by the gradient
    // checks and shared with the training step
    void compute_gradients(const std::vector<Eigen::Index>& batch, bool training, Rng* rng) {
        const auto m = static_cast<Eigen::Index>(batch.size());
        Vector yhat = Vector::Zero(m);
        for (size_t t = 0; t < ws_.size(); ++t) {
            auto& w = ws_[t];
            const auto& net = model_.subnets[t];
            const size_t L = net.layers.size();
            Matrix a(m, w.inputs.cols());
            for (Eigen::Index i = 0; i < m; ++i) a.row(i) = w.inputs.row(batch[static_cast<size_t>(i)]);
            for (size_t l = 0; l < L; ++l) {
                w.preacts[l].resize(m, net.layers[l].W.rows());
                w.preacts[l].noalias() = (l == 0 ? a : w.acts[l - 1]) * net.layers[l].W.transpose();
                w.preacts[l].rowwise() += net.layers[l].b.transpose();
                w.acts[l] = (l + 1 < L) ? w.preacts[l].cwiseMax(0.0).eval() : w.preacts[l];
                double p = model_.config.dropout_rates[l];
                if (training && p > 0.0) {
                    w.masks[l].resize(m, w.acts[l].cols());
                    double scale = 1.0 / (1.0 - p);
                    for (Eigen::Index i = 0; i < w.masks[l].rows(); ++i)
                        for (Eigen::Index j = 0; j < w.masks[l].cols(); ++j)
                            w.masks[l](i, j) = rng->uniform() < p ? 0.0 : scale;
                    w.acts[l] = w.acts[l].cwiseProduct(w.masks[l]);
                } else {
                    w.masks[l].resize(0, 0);
                }
            }
            yhat.noalias() += w.acts[L - 1] * net.out_w;
            w.batch_input = std::move(a);
        }
        Vector e = yhat;
        for (Eigen::Index i = 0; i < m; ++i) e[i] -= F_[batch[static_cast<size_t>(i)]];
        last_batch_mse_ = e.squaredNorm() / static_cast<double>(m);
        Vector g = e * (2.0 / static_cast<double>(m));

        for (size_t t = 0; t < ws_.size(); ++t) {
            auto& w = ws_[t];
            const auto& net = model_.subnets[t];
            const size_t L = net.layers.size();
            w.grad_out_w.noalias() = w.acts[L - 1].transpose() * g;
            Matrix delta = g * net.out_w.transpose();  // m x b_theta
            for (size_t li = L; li-- > 0;) {
                if (w.masks[li].size() > 0) delta = delta.cwiseProduct(w.masks[li]);
                if (li + 1 < L)  // rectifier derivative; last hidden layer is linear
                    delta = delta.cwiseProduct(
                        (w.preacts[li].array() > 0.0).cast<double>().matrix());
                const Matrix& below = (li == 0) ? w.batch_input : w.acts[li - 1];
                w.gradW[li].noalias() = delta.transpose() * below;
                w.gradb[li] = delta.colwise().sum();
                if (li > 0) {
                    Matrix next = delta * net.layers[li].W;
                    delta = std::move(next);
                }
            }
        }
    }

    double last_batch_mse() const { return last_batch_mse_; }

    void adam_step(double lr, const TrainConfig& cfg) {
        ++adam_t_;
        double bc1 = 1.0 - std::pow(cfg.beta1, adam_t_);
        double bc2 = 1.0 - std::pow(cfg.beta2, adam_t_);
        auto update = [&](auto& param, auto& grad, auto& m, auto& v) {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
            param -= lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + cfg.epsilon).matrix());
        };
        for (size_t t = 0; t < ws_.size(); ++t) {
            auto& w = ws_[t];
            auto& net = model_.subnets[t];
            for (size_t l = 0; l < net.layers.size(); ++l) {
                update(net.layers[l].W, w.gradW[l], w.adam[l].mW, w.adam[l].vW);
                update(net.layers[l].b, w.gradb[l], w.adam[l].mb, w.adam[l].vb);
            }
            update(net.out_w, w.grad_out_w, w.adam_out.mb, w.adam_out.vb);
        }
    }

    std::vector<SubnetWorkspace>& workspaces() { return ws_; }

private:
    NamModel& model_;
    const Vector& F_;
    std::vector<SubnetWorkspace> ws_;
    double last_batch_mse_ = 0.0;
    long adam_t_ = 0;
};

}  // namespace detail

// Minimum sample count required by the later projection steps: the widest
// lower-order basis is the one below the highest level.
inline Eigen::Index min_samples_for_projection(const EffectSet& set, const SubNetworkConfig& cfg) {
    int max_level = set.max_level();
    Eigen::Index b = 1;  // intercept column
    for (const auto& t : set.terms)
        if (t.level() < max_level) b += cfg.penultimate_width();
    return b;
}

// Joint backpropagation training on MSE with Adam. Training intentionally
// runs to near-interpolation; there is no validation split and no early
// stopping other than reaching r2_target.
inline FitReport fit(NamModel& model, const SampleSet& samples, const TrainConfig& cfg) {
    cfg.validate();
    samples.validate();
    if (samples.d() != model.effect_set.d)
        throw ValidationError("sample dimension does not match the model's effect set");
    Eigen::Index need = min_samples_for_projection(model.effect_set, model.config);
    if (samples.n() < need)
        throw ValidationError("n=" + std::to_string(samples.n()) + " is below the projection requirement B=" +
                              std::to_string(need) + " for this architecture");

    FitReport report;
    double fmean = samples.F.mean();
    double sst = (samples.F.array() - fmean).square().sum();
    report.zero_target_variance = (sst == 0.0);

    detail::NamTrainer trainer(model, samples.X, samples.F);
    Rng rng(derive_seed(cfg.seed, 0x7261696eull));

    const auto n = samples.n();
    std::vector<Eigen::Index> perm(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    const Eigen::Index bs = cfg.full_batch ? n : std::min<Eigen::Index>(cfg.batch_size, n);

    bool has_dropout = false;
    for (double p : model.config.dropout_rates) has_dropout |= (p > 0.0);
    bool dropout_phase = has_dropout && !report.zero_target_variance;

    double lr = cfg.learning_rate;
    double best_r2 = -std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (!cfg.full_batch) rng.shuffle(perm.begin(), perm.end());
        for (Eigen::Index start = 0; start < n; start += bs) {
            Eigen::Index m = std::min(bs, n - start);
            std::vector<Eigen::Index> batch(perm.begin() + start, perm.begin() + start + m);
            trainer.compute_gradients(batch, /*training=*/dropout_phase, &rng);
            if (!is_finite(trainer.last_batch_mse()))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            trainer.adam_step(lr, cfg);
        }
        double mse = trainer.loss_full();
        if (!is_finite(mse)) throw NumericError("non-finite loss after epoch " + std::to_string(epoch));
        report.loss_curve.push_back(mse);
        report.epochs = epoch + 1;
        report.final_mse = mse;
        if (report.zero_target_variance) {
            report.final_r2 = 0.0;
            if (mse <= 1e-14 * std::max(1.0, fmean * fmean)) {
                report.converged = true;
                break;
            }
            continue;
        }
        double r2 = 1.0 - mse * static_cast<double>(n) / sst;
        report.final_r2 = r2;
        if (r2 >= cfg.r2_target) {
            report.converged = true;
            break;
        }
        if (dropout_phase && cfg.dropout_finetune) {
            // leave the dropout phase once the mask-noise floor is reached
            if (r2 > best_r2 + cfg.finetune_min_delta) {
                best_r2 = r2;
                since_best = 0;
            } else if (++since_best >= cfg.finetune_patience || epoch + 1 >= cfg.max_epochs / 2) {
                dropout_phase = false;
                report.finetune_start = epoch + 1;
                best_r2 = r2;
                since_best = 0;
            }
        } else {
            if (r2 > best_r2) {
                best_r2 = r2;
                since_best = 0;
            } else if (++since_best >= cfg.plateau_patience && lr > cfg.min_learning_rate) {
                lr = std::max(cfg.min_learning_rate, lr * cfg.plateau_decay);
                since_best = 0;
            }
        }
    }
    return report;
}

// Test hook: a stochastic forward pass with dropout active (the only mode in
// which masks apply).
inline Vector forward_training(const NamModel& model, const Matrix& X, Rng& rng) {
    NamModel copy = model;  // trainer mutates workspaces only, but keep the API const
    Vector zero_target = Vector::Zero(X.rows());
    detail::NamTrainer trainer(copy, X, zero_target);
    std::vector<Eigen::Index> all(static_cast<size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) all[static_cast<size_t>(i)] = i;
    trainer.compute_gradients(all, /*training=*/true, &rng);
    Vector yhat = Vector::Zero(X.rows());
    auto& ws = trainer.workspaces();
    for (size_t t = 0; t < ws.size(); ++t)
        yhat += ws[t].acts.back() * copy.subnets[t].out_w;
    return yhat;
}

// Term basis backed by a fitted subnetwork's penultimate layer.
class SubnetBasis : public TermBasis {
public:
    SubnetBasis(std::shared_ptr<const NamModel> model, EffectIndex theta, const Matrix& X)
        : model_(std::move(model)), theta_(std::move(theta)) {
        mat_ = penultimate_matrix(*model_, X, theta_);
    }

    Eigen::Index cols() const override { return mat_.cols(); }
    const Matrix& sample_matrix() const override { return mat_; }
    Vector eval(const Vector& x_full) const override {
        if (theta_.is_intercept()) return Vector::Ones(1);
        Vector xt(theta_.level());
        Eigen::Index j = 0;
        for (int idx : theta_.indices()) xt[j++] = x_full[idx - 1];
        return model_->subnet(theta_).penultimate(xt);
    }
    Matrix eval_batch(const Matrix& x_rows) const override {
        if (theta_.is_intercept()) return Matrix::Ones(x_rows.rows(), 1);
        return detail::penultimate_batch(model_->subnet(theta_),
                                         detail::term_inputs(x_rows, theta_));
    }

private:
    std::shared_ptr<const NamModel> model_;
    EffectIndex theta_;
    Matrix mat_;
};

}  // namespace stackdec
