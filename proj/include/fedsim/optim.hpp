#pragma once

#include "fedsim/matrix.hpp"
#include "fedsim/model.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace fedsim {

struct SgdConfig {
    double lr = 0.01;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Entry-wise stateful regularizer state; moments are keyed by parameter name
// and must be initialized against the trainable set before stepping.
struct AdamState {
    AdamConfig cfg;
    std::int64_t step = 0;
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;

    void init(const ParamSet& params);
    void init_entry(const std::string& name, std::size_t rows, std::size_t cols);
    bool initialized_for(const std::string& name, const Matrix& grad) const;
};

enum class InnerRegularizer { sgd, adam };

struct GaloreConfig {
    std::size_t rank = 4;
    std::int64_t refresh_period = 50; // T_proj, in local steps
    double scale = 1.0;
    InnerRegularizer inner = InnerRegularizer::adam;
    SgdConfig sgd;
    AdamConfig adam;
    bool reset_inner_on_refresh = false;
    // gradient projection is applied only to these parameters; other
    // trainables fall back to the inner regularizer on the full gradient
    std::set<std::string> projected_names = {"W", "Wup", "Wcls"};
};

// One-sided projection: for d <= k the left factor P (d x r) is stored and the
// right side acts as identity; otherwise the right factor (r x k rows of Vt).
struct GaloreProjection {
    bool left = true;
    Matrix basis;
};

struct GaloreState {
    GaloreConfig cfg;
    std::int64_t step = 0;
    bool force_refresh = false;
    std::map<std::string, GaloreProjection> projections;
    AdamState inner_adam; // compressed shapes for projected params, full otherwise

    void init(const ParamSet& params);
};

// params -= lr * grad on every trainable matrix.
void sgd_step(ParamSet& params, const GradSet& grads, const SgdConfig& cfg);

// Standard bias-corrected Adam update.
void adam_step(AdamState& state, ParamSet& params, const GradSet& grads);

// Recompute the projection basis for one parameter from its current gradient.
void galore_refresh(GaloreState& state, const std::string& name, const Matrix& grad);

// Projected step: refresh the basis every refresh_period steps (and when
// force_refresh is set), compress the gradient, apply the inner regularizer
// in the subspace, project back scaled, subtract via the inner learning rate.
void galore_step(GaloreState& state, ParamSet& params, const GradSet& grads);

// The update matrix the last galore_step would apply for (name, grad) given
// the current projection; exposed for rank/accumulation checks.
Matrix galore_project_back(const GaloreState& state, const std::string& name, const Matrix& in);
Matrix galore_compress(const GaloreState& state, const std::string& name, const Matrix& grad);

} // namespace fedsim
