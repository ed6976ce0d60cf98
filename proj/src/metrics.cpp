#include "fedsim/metrics.hpp"

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace fedsim {

double bound_direct(const BoundInputs& b) {
    return b.learning_rate * b.grad_bound * b.grad_bound * b.rounds * b.t_agg + b.constant_c;
}

double bound_ffalora(const BoundInputs& b) {
    const double dnst = b.grad_bound * b.num_clients * b.rounds * b.t_agg;
    return dnst * (dnst * b.constant_c + b.learning_rate / b.num_clients * b.w_star_norm);
}

GenBounds generalization_bounds(const BoundInputs& b, const std::vector<Matrix>& client_weights) {
    if (client_weights.empty()) {
        throw ContractError("generalization_bounds: no client weight matrices");
    }
    if (b.samples <= 0.0 || b.sigma <= 0.0) {
        throw ContractError("generalization_bounds: sigma and n must be positive");
    }
    const double base = 2.0 * b.sigma * b.sigma / b.samples;
    GenBounds out;
    for (const Matrix& w : client_weights) {
        const double d = static_cast<double>(w.rows());
        const double k = static_cast<double>(w.cols());
        out.e1 += std::sqrt(base * b.bits_q * d * k);
        out.e2 += std::sqrt(base * row_softmax_entropy(w));
        out.e2_uniform_limit += std::sqrt(base * d / k * std::log(k));
        out.e3 += std::sqrt(base * std::log(2.0) * b.rank_r * b.bits_q * d);
    }
    const double inv_n = 1.0 / static_cast<double>(client_weights.size());
    out.e1 *= inv_n;
    out.e2 *= inv_n;
    out.e2_uniform_limit *= inv_n;
    out.e3 *= inv_n;
    return out;
}

Matrix minimize_backtracking(const std::function<double(const Matrix&)>& loss_fn,
                             const std::function<Matrix(const Matrix&)>& grad_fn, Matrix w0,
                             double tol, std::size_t max_iters) {
    Matrix w = std::move(w0);
    double step = 1.0;
    double loss = loss_fn(w);
    std::size_t it = 0;
    const double eps = std::numeric_limits<double>::epsilon();

    // Armijo phase: sufficient-decrease line search while the decrease is
    // measurable against the loss ulp.
    for (; it < max_iters; ++it) {
        Matrix grad = grad_fn(w);
        const double gnorm = frobenius_norm(grad);
        if (gnorm <= tol) {
            return w;
        }
        const double g2 = gnorm * gnorm;
        step = std::min(step * 2.0, 1e6);
        bool saturated = false;
        for (;;) {
            if (1e-4 * step * g2 <= 8.0 * eps * (1.0 + std::abs(loss))) {
                saturated = true; // decrease below loss resolution
                break;
            }
            Matrix trial = w;
            trial.add_scaled(grad, -step);
            const double trial_loss = loss_fn(trial);
            if (trial_loss <= loss - 1e-4 * step * g2) {
                w = std::move(trial);
                loss = trial_loss;
                break;
            }
            step *= 0.5;
        }
        if (saturated) {
            break;
        }
    }

    // Fixed-step tail: the loss can no longer certify progress, but gradient
    // iterations still contract for smooth convex objectives; accept a step
    // whenever it reduces the gradient norm.
    Matrix grad = grad_fn(w);
    double gnorm = frobenius_norm(grad);
    int stalls = 0;
    for (; it < max_iters; ++it) {
        if (gnorm <= tol) {
            return w;
        }
        Matrix trial = w;
        trial.add_scaled(grad, -step);
        Matrix trial_grad = grad_fn(trial);
        const double trial_norm = frobenius_norm(trial_grad);
        if (trial_norm < gnorm) {
            w = std::move(trial);
            grad = std::move(trial_grad);
            gnorm = trial_norm;
            stalls = 0;
        } else {
            step *= 0.5;
            if (++stalls > 60) {
                throw NumericalError(
                    "minimize_backtracking: gradient floor reached above tol");
            }
        }
    }
    throw NumericalError("minimize_backtracking: no convergence within " +
                         std::to_string(max_iters) + " iterations");
}

ParamSet compute_w_star(const LabeledDataset& pooled_train, const ModelConfig& cfg, double tol) {
    if (cfg.family != ModelFamily::convex) {
        throw ContractError("compute_w_star: convex family only");
    }
    if (cfg.l2_lambda <= 0.0) {
        throw ContractError("compute_w_star: l2_lambda must be positive");
    }
    const Batch batch = full_batch(pooled_train);
    ParamSet probe = make_params(cfg);
    auto loss_fn = [&](const Matrix& w) {
        probe.at("W").value = w;
        return loss_only(probe, cfg, batch);
    };
    auto grad_fn = [&](const Matrix& w) {
        probe.at("W").value = w;
        auto [loss, cache] = forward(probe, cfg, batch);
        (void)loss;
        return backward(probe, cfg, batch, cache).at("W");
    };
    Matrix w_star =
        minimize_backtracking(loss_fn, grad_fn, Matrix(cfg.num_classes, cfg.feature_dim), tol);
    ParamSet out = make_params(cfg);
    out.at("W").value = std::move(w_star);
    return out;
}

double excess_risk(const ParamSet& params, const ParamSet& w_star, const ModelConfig& cfg,
                   const LabeledDataset& pooled) {
    if (cfg.family != ModelFamily::convex) {
        throw ContractError("excess_risk: convex family only");
    }
    const Batch batch = full_batch(pooled);
    return loss_only(params, cfg, batch) - loss_only(w_star, cfg, batch);
}

RankTrace rank_trace(const Matrix& agg_update, std::size_t r_target) {
    RankTrace out;
    out.rank = numerical_rank(agg_update);
    SvdResult dec = svd(agg_update);
    double total = 0.0, tail = 0.0;
    for (std::size_t j = 0; j < dec.singular_values.size(); ++j) {
        const double s2 = dec.singular_values[j] * dec.singular_values[j];
        total += s2;
        if (j >= r_target) {
            tail += s2;
        }
    }
    out.tail_mass = total > 0.0 ? tail / total : 0.0;
    return out;
}

double macro_f1(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels,
                std::size_t num_classes) {
    if (predictions.size() != labels.size()) {
        throw ContractError("macro_f1: predictions/labels length mismatch");
    }
    if (num_classes == 0) {
        throw ContractError("macro_f1: num_classes must be >= 1");
    }
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto p = static_cast<std::size_t>(predictions[i]);
        const auto y = static_cast<std::size_t>(labels[i]);
        if (p >= num_classes || y >= num_classes) {
            throw ContractError("macro_f1: class index out of range");
        }
        if (p == y) {
            ++tp[y];
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    return sum / static_cast<double>(num_classes);
}

std::vector<bool> norm_bound_audit(std::span<const RoundNormAudit> rounds, double eta, double b0,
                                   double t_agg) {
    std::vector<bool> out;
    out.reserve(rounds.size());
    for (const auto& r : rounds) {
        const double bound =
            b0 + eta * static_cast<double>(r.round) * t_agg * r.max_grad_norm;
        out.push_back(r.weight_norm <= bound + 1e-12 * (1.0 + bound));
    }
    return out;
}

} // namespace fedsim
