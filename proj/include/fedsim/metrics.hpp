#pragma once

#include "fedsim/data.hpp"
#include "fedsim/matrix.hpp"
#include "fedsim/model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

// One row of the run log. Absent metrics stay unset and serialize as empty
// CSV cells, never zeros.
struct MetricsRecord {
    int epoch = 0;
    int round = 0;
    std::optional<int> local_step;
    std::string client_id; // "0".."N-1" or "global"
    std::optional<double> loss;
    std::optional<double> eval_loss;
    std::optional<double> accuracy;
    std::optional<double> macro_f1;
    std::optional<double> excess_risk;
    std::optional<int> agg_update_rank;
    std::optional<double> svd_tail_mass;
    std::optional<double> entropy_wup;
    std::optional<double> grad_spectral_norm;
    std::optional<double> weight_spectral_norm;
    std::optional<double> bound_direct;
    std::optional<double> bound_ffalora;
};

// Inputs to the closed-form bound calculators. D and w_star_norm are measured
// quantities; sigma and q are stated constants, not estimates.
struct BoundInputs {
    double grad_bound = 1.0;    // D
    double num_clients = 1.0;   // N
    double rounds = 0.0;        // S
    double t_agg = 1.0;
    double constant_c = 0.0;    // c
    double learning_rate = 0.0; // alpha
    double w_star_norm = 0.0;   // ||dW*||_2
    double sigma = 1.0;
    double samples = 1.0; // n
    double bits_q = 32.0; // q
    double dim_d = 1.0;
    double dim_k = 1.0;
    double rank_r = 1.0;
};

// alpha * D^2 * S * t_agg + c
double bound_direct(const BoundInputs& b);
// D*N*S*t_agg * (D*N*S*t_agg * c + (alpha/N) * ||dW*||_2)
double bound_ffalora(const BoundInputs& b);

struct GenBounds {
    double e1 = 0.0;
    double e2 = 0.0;
    double e2_uniform_limit = 0.0; // stated k-uniform limit, logged alongside e2
    double e3 = 0.0;
};
// Information-capacity generalization bounds averaged over client matrices:
// E1 = mean sqrt(2 sigma^2 / n * q d k), E2 = mean sqrt(2 sigma^2 / n * H(W_i)),
// E3 = mean sqrt(2 sigma^2 ln2 / n * r q d).
GenBounds generalization_bounds(const BoundInputs& b, const std::vector<Matrix>& client_weights);

// Full-batch gradient descent with Armijo backtracking on a matrix objective.
// Returns the iterate whose gradient Frobenius norm is <= tol.
Matrix minimize_backtracking(const std::function<double(const Matrix&)>& loss_fn,
                             const std::function<Matrix(const Matrix&)>& grad_fn, Matrix w0,
                             double tol, std::size_t max_iters = 200000);

// Pooled-data regularized optimum of the convex family (unique for
// l2_lambda > 0); the reference point for excess risk.
ParamSet compute_w_star(const LabeledDataset& pooled_train, const ModelConfig& cfg,
                        double tol = 1e-8);

// L(params) - L(w_star) on the given pooled set.
double excess_risk(const ParamSet& params, const ParamSet& w_star, const ModelConfig& cfg,
                   const LabeledDataset& pooled);

struct RankTrace {
    std::size_t rank = 0;
    double tail_mass = 0.0; // sum_{j > r_target} s_j^2 / sum_j s_j^2
};
RankTrace rank_trace(const Matrix& agg_update, std::size_t r_target);

// Unweighted mean of per-class F1; a class with undefined F1 contributes 0.
double macro_f1(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels,
                std::size_t num_classes);

struct RoundNormAudit {
    int round = 0;              // S-index
    double weight_norm = 0.0;   // ||W_agg||_2 at this aggregation
    double max_grad_norm = 0.0; // running max gradient spectral norm D
};
// Per-round check of ||W_agg||_2 <= b0 + eta * S * t_agg * D.
std::vector<bool> norm_bound_audit(std::span<const RoundNormAudit> rounds, double eta, double b0,
                                   double t_agg);

} // namespace fedsim
