#include "fedsim/optim.hpp"

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

#include <cmath>

namespace fedsim {

void AdamState::init(const ParamSet& params) {
    for (const auto& p : params) {
        if (p.trainable) {
            init_entry(p.name, p.value.rows(), p.value.cols());
        }
    }
}

void AdamState::init_entry(const std::string& name, std::size_t rows, std::size_t cols) {
    m[name] = Matrix(rows, cols);
    v[name] = Matrix(rows, cols);
}

bool AdamState::initialized_for(const std::string& name, const Matrix& grad) const {
    auto it = m.find(name);
    return it != m.end() && it->second.same_shape(grad);
}

void GaloreState::init(const ParamSet& params) {
    inner_adam.cfg = cfg.adam;
    for (const auto& p : params) {
        if (p.trainable && cfg.projected_names.count(p.name) == 0) {
            // fallback params carry full-shape inner moments
            inner_adam.init_entry(p.name, p.value.rows(), p.value.cols());
        }
    }
}

void sgd_step(ParamSet& params, const GradSet& grads, const SgdConfig& cfg) {
    if (cfg.lr <= 0.0) {
        throw ContractError("sgd_step: learning rate must be positive");
    }
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        const Matrix& g = grads.at(p.name);
        if (!g.same_shape(p.value)) {
            throw ContractError("sgd_step: gradient shape mismatch for '" + p.name + "'");
        }
        p.value.add_scaled(g, -cfg.lr);
    }
}

namespace {

// Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps); lr applied by
// the caller. `step` is the post-increment step count (>= 1).
Matrix adam_direction(AdamState& state, const std::string& name, const Matrix& grad,
                      std::int64_t step) {
    if (!state.initialized_for(name, grad)) {
        throw ContractError("adam: state not initialized for '" + name + "'");
    }
    Matrix& m = state.m[name];
    Matrix& v = state.v[name];
    const AdamConfig& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    Matrix dir(grad.rows(), grad.cols());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad.data()[i];
        m.data()[i] = c.beta1 * m.data()[i] + (1.0 - c.beta1) * g;
        v.data()[i] = c.beta2 * v.data()[i] + (1.0 - c.beta2) * g * g;
        const double m_hat = m.data()[i] / bc1;
        const double v_hat = v.data()[i] / bc2;
        dir.data()[i] = m_hat / (std::sqrt(v_hat) + c.eps);
    }
    return dir;
}

} // namespace

void adam_step(AdamState& state, ParamSet& params, const GradSet& grads) {
    ++state.step;
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        Matrix dir = adam_direction(state, p.name, grads.at(p.name), state.step);
        p.value.add_scaled(dir, -state.cfg.lr);
    }
}

Matrix galore_compress(const GaloreState& state, const std::string& name, const Matrix& grad) {
    const GaloreProjection& proj = state.projections.at(name);
    return proj.left ? matmul(transpose(proj.basis), grad) : matmul(grad, transpose(proj.basis));
}

Matrix galore_project_back(const GaloreState& state, const std::string& name, const Matrix& in) {
    const GaloreProjection& proj = state.projections.at(name);
    return proj.left ? matmul(proj.basis, in) : matmul(in, proj.basis);
}

void galore_refresh(GaloreState& state, const std::string& name, const Matrix& grad) {
    const std::size_t r = std::min(state.cfg.rank, std::min(grad.rows(), grad.cols()));
    if (r < 1) {
        throw ContractError("galore_refresh: rank must be >= 1");
    }
    SvdResult dec = svd_truncated(grad, r);
    svd_fix_signs(dec);
    GaloreProjection proj;
    if (grad.rows() <= grad.cols()) {
        proj.left = true;
        proj.basis = std::move(dec.u); // d x r
    } else {
        proj.left = false;
        proj.basis = std::move(dec.vt); // r x k
    }
    state.projections[name] = std::move(proj);
    if (state.cfg.reset_inner_on_refresh) {
        if (state.inner_adam.m.count(name) > 0) {
            state.inner_adam.init_entry(name, state.inner_adam.m[name].rows(),
                                        state.inner_adam.m[name].cols());
        }
    }
}

void galore_step(GaloreState& state, ParamSet& params, const GradSet& grads) {
    const bool refresh_now = state.force_refresh || state.step % state.cfg.refresh_period == 0;
    state.force_refresh = false;
    const double lr =
        state.cfg.inner == InnerRegularizer::sgd ? state.cfg.sgd.lr : state.cfg.adam.lr;
    if (lr <= 0.0) {
        throw ContractError("galore_step: learning rate must be positive");
    }
    ++state.step;
    ++state.inner_adam.step;
    for (auto& p : params) {
        if (!p.trainable) {
            continue;
        }
        const Matrix& g = grads.at(p.name);
        if (!g.same_shape(p.value)) {
            throw ContractError("galore_step: gradient shape mismatch for '" + p.name + "'");
        }
        if (state.cfg.projected_names.count(p.name) == 0) {
            // not a low-rank-gradient layer: inner regularizer on the raw gradient
            if (state.cfg.inner == InnerRegularizer::sgd) {
                p.value.add_scaled(g, -lr);
            } else {
                Matrix dir = adam_direction(state.inner_adam, p.name, g, state.inner_adam.step);
                p.value.add_scaled(dir, -lr);
            }
            continue;
        }
        if (refresh_now || state.projections.count(p.name) == 0) {
            galore_refresh(state, p.name, g);
        }
        Matrix compressed = galore_compress(state, p.name, g);
        Matrix direction;
        if (state.cfg.inner == InnerRegularizer::sgd) {
            direction = std::move(compressed);
        } else {
            if (!state.inner_adam.initialized_for(p.name, compressed)) {
                state.inner_adam.init_entry(p.name, compressed.rows(), compressed.cols());
            }
            direction =
                adam_direction(state.inner_adam, p.name, compressed, state.inner_adam.step);
        }
        Matrix update = galore_project_back(state, p.name, direction);
        update *= state.cfg.scale;
        p.value.add_scaled(update, -lr);
    }
}

} // namespace fedsim
