#include "fedsim/model.hpp"

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace fedsim {

void ModelConfig::validate() const {
    if (num_classes < 1) {
        throw ContractError("ModelConfig: num_classes must be >= 1");
    }
    if (family == ModelFamily::convex) {
        if (feature_dim < 1) {
            throw ContractError("ModelConfig: feature_dim must be >= 1");
        }
        if (l2_lambda <= 0.0) {
            throw ContractError("ModelConfig: convex family requires l2_lambda > 0");
        }
    } else {
        if (vocab < 1 || hidden < 1 || mlp_mult < 1 || seq_len < 1) {
            throw ContractError("ModelConfig: transformer dimensions must be >= 1");
        }
    }
}

void ParamSet::add(std::string name, Matrix value, bool trainable) {
    if (has(name)) {
        throw ContractError("ParamSet: duplicate name '" + name + "'");
    }
    params_.push_back(Param{std::move(name), std::move(value), trainable});
}

bool ParamSet::has(std::string_view name) const {
    for (const auto& p : params_) {
        if (p.name == name) {
            return true;
        }
    }
    return false;
}

Param& ParamSet::at(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw ContractError("ParamSet: unknown parameter '" + std::string(name) + "'");
}

const Param& ParamSet::at(std::string_view name) const {
    return const_cast<ParamSet*>(this)->at(name);
}

std::vector<std::string> ParamSet::trainable_names() const {
    std::vector<std::string> names;
    for (const auto& p : params_) {
        if (p.trainable) {
            names.push_back(p.name);
        }
    }
    return names;
}

void GradSet::add(std::string name, Matrix grad) {
    if (has(name)) {
        throw ContractError("GradSet: duplicate name '" + name + "'");
    }
    grads_.emplace_back(std::move(name), std::move(grad));
}

bool GradSet::has(std::string_view name) const {
    for (const auto& [n, g] : grads_) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

Matrix& GradSet::at(std::string_view name) {
    for (auto& [n, g] : grads_) {
        if (n == name) {
            return g;
        }
    }
    throw ContractError("GradSet: unknown parameter '" + std::string(name) + "'");
}

const Matrix& GradSet::at(std::string_view name) const {
    return const_cast<GradSet*>(this)->at(name);
}

SelectionScheme parse_selection_scheme(std::string_view name) {
    if (name == "all") {
        return SelectionScheme::all;
    }
    if (name == "attention_qkv") {
        return SelectionScheme::attention_qkv;
    }
    if (name == "project_up") {
        return SelectionScheme::project_up;
    }
    if (name == "classifier_and_project_up") {
        return SelectionScheme::classifier_and_project_up;
    }
    throw ContractError("unknown selection scheme '" + std::string(name) + "'");
}

std::string to_string(SelectionScheme scheme) {
    switch (scheme) {
    case SelectionScheme::all:
        return "all";
    case SelectionScheme::attention_qkv:
        return "attention_qkv";
    case SelectionScheme::project_up:
        return "project_up";
    case SelectionScheme::classifier_and_project_up:
        return "classifier_and_project_up";
    }
    throw ContractError("invalid selection scheme");
}

ParamSet make_params(const ModelConfig& cfg) {
    cfg.validate();
    ParamSet ps;
    if (cfg.family == ModelFamily::convex) {
        ps.add("W", Matrix(cfg.num_classes, cfg.feature_dim));
        return ps;
    }
    const std::size_t h = cfg.hidden;
    const std::size_t mh = cfg.hidden * cfg.mlp_mult;
    ps.add("Emb", Matrix(cfg.vocab, h));
    ps.add("Wq", Matrix(h, h));
    ps.add("Wk", Matrix(h, h));
    ps.add("Wv", Matrix(h, h));
    ps.add("Wo", Matrix(h, h));
    ps.add("Wup", Matrix(h, mh));
    ps.add("Wdown", Matrix(mh, h));
    ps.add("Wcls", Matrix(h, cfg.num_classes));
    return ps;
}

ParamSet make_params(const ModelConfig& cfg, double init_std, RngSeed seed) {
    ParamSet ps = make_params(cfg);
    if (init_std > 0.0) {
        std::uint64_t index = 0;
        for (auto& p : ps) {
            p.value = gaussian_init(p.value.rows(), p.value.cols(), init_std,
                                    derive_seed(seed, p.name, index++));
        }
    }
    return ps;
}

std::vector<std::string> scheme_targets(const ModelConfig& cfg, SelectionScheme scheme) {
    if (cfg.family == ModelFamily::convex) {
        if (scheme != SelectionScheme::all) {
            throw ContractError("convex family supports only the 'all' selection scheme");
        }
        return {"W"};
    }
    switch (scheme) {
    case SelectionScheme::all:
        return {"Emb", "Wq", "Wk", "Wv", "Wo", "Wup", "Wdown", "Wcls"};
    case SelectionScheme::attention_qkv:
        return {"Wq", "Wk", "Wv"};
    case SelectionScheme::project_up:
        return {"Wup"};
    case SelectionScheme::classifier_and_project_up:
        return {"Wup", "Wcls"};
    }
    throw ContractError("invalid selection scheme");
}

ParamSet select_trainable(ParamSet params, const ModelConfig& cfg, SelectionScheme scheme) {
    const std::vector<std::string> targets = scheme_targets(cfg, scheme);
    for (auto& p : params) {
        p.trainable = std::find(targets.begin(), targets.end(), p.name) != targets.end();
    }
    return params;
}

namespace {

std::uint64_t mix_bytes(std::uint64_t h, const void* bytes, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t cache_fingerprint(const ParamSet& params, const Batch& batch) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : params) {
        h = mix_bytes(h, p.name.data(), p.name.size());
        h = mix_bytes(h, p.value.data().data(), p.value.size() * sizeof(double));
    }
    h = mix_bytes(h, batch.labels.data(), batch.labels.size() * sizeof(std::int32_t));
    for (const auto& f : batch.features) {
        h = mix_bytes(h, f.data(), f.size() * sizeof(double));
    }
    for (const auto& t : batch.tokens) {
        h = mix_bytes(h, t.data(), t.size() * sizeof(std::int32_t));
    }
    return h;
}

void validate_batch(const ModelConfig& cfg, const Batch& batch) {
    if (batch.labels.empty()) {
        throw ContractError("Batch: empty");
    }
    for (std::int32_t y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= cfg.num_classes) {
            throw ContractError("Batch: label out of range");
        }
    }
    if (cfg.family == ModelFamily::convex) {
        if (batch.features.size() != batch.labels.size()) {
            throw ContractError("Batch: features/labels size mismatch");
        }
        for (const auto& f : batch.features) {
            if (f.size() != cfg.feature_dim) {
                throw ContractError("Batch: feature dimension mismatch");
            }
        }
    } else {
        if (batch.tokens.size() != batch.labels.size()) {
            throw ContractError("Batch: tokens/labels size mismatch");
        }
        for (const auto& t : batch.tokens) {
            if (t.size() != cfg.seq_len) {
                throw ContractError("Batch: sequence length mismatch");
            }
            for (std::int32_t tok : t) {
                if (tok < 0 || static_cast<std::size_t>(tok) >= cfg.vocab) {
                    throw ContractError("Batch: token out of range");
                }
            }
        }
    }
}

void ensure_finite(const Matrix& m, const char* layer) {
    if (!m.all_finite()) {
        throw NumericalError(std::string("forward: non-finite activation at ") + layer);
    }
}

// rows of `out` become softmax of rows of `logits` (max-subtracted)
Matrix row_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            row_max = std::max(row_max, logits(i, j));
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            out(i, j) = std::exp(logits(i, j) - row_max);
            denom += out(i, j);
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            out(i, j) /= denom;
        }
    }
    return out;
}

std::vector<double> softmax_vec(const std::vector<double>& logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        m = std::max(m, v);
    }
    std::vector<double> p(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        denom += p[i];
    }
    for (double& v : p) {
        v /= denom;
    }
    return p;
}

double convex_forward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                      ForwardCache* cache) {
    const Matrix& w = params.at("W").value;
    if (w.rows() != cfg.num_classes || w.cols() != cfg.feature_dim) {
        throw ContractError("forward: W shape does not match config");
    }
    const std::size_t b = batch.size();
    Matrix probs(b, cfg.num_classes);
    double loss = 0.0;
    std::vector<double> logits(cfg.num_classes);
    for (std::size_t s = 0; s < b; ++s) {
        const auto& x = batch.features[s];
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
                acc += w(c, j) * x[j];
            }
            logits[c] = acc;
        }
        std::vector<double> p = softmax_vec(logits);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            probs(s, c) = p[c];
        }
        loss -= std::log(std::max(p[batch.labels[s]], 1e-300));
    }
    loss /= static_cast<double>(b);
    double reg = 0.0;
    for (double v : w.data()) {
        reg += v * v;
    }
    loss += 0.5 * cfg.l2_lambda * reg;
    if (!std::isfinite(loss)) {
        throw NumericalError("forward: non-finite loss (convex)");
    }
    if (cache) {
        cache->probs = std::move(probs);
    }
    return loss;
}

double transformer_forward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                           ForwardCache* cache) {
    const Matrix& emb = params.at("Emb").value;
    const Matrix& wq = params.at("Wq").value;
    const Matrix& wk = params.at("Wk").value;
    const Matrix& wv = params.at("Wv").value;
    const Matrix& wo = params.at("Wo").value;
    const Matrix& wup = params.at("Wup").value;
    const Matrix& wdown = params.at("Wdown").value;
    const Matrix& wcls = params.at("Wcls").value;
    const std::size_t h = cfg.hidden;
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));

    double loss = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& toks = batch.tokens[s];
        const std::size_t len = toks.size();
        ForwardCache::SeqCache sc;
        sc.x = Matrix(len, h);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < h; ++j) {
                sc.x(t, j) = emb(static_cast<std::size_t>(toks[t]), j);
            }
        }
        sc.q = matmul(sc.x, wq);
        sc.k = matmul(sc.x, wk);
        sc.v = matmul(sc.x, wv);
        Matrix scores = matmul(sc.q, transpose(sc.k));
        scores *= inv_sqrt_h;
        ensure_finite(scores, "attention scores");
        sc.attn = row_softmax(scores);
        sc.z = matmul(sc.attn, sc.v);
        sc.o = matmul(sc.z, wo);
        ensure_finite(sc.o, "Wo output");
        Matrix up = matmul(sc.o, wup);
        sc.up_act = up;
        for (double& v : sc.up_act.data()) {
            v = std::tanh(v);
        }
        sc.down = matmul(sc.up_act, wdown);
        ensure_finite(sc.down, "Wdown output");

        sc.pooled.assign(h, 0.0);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < h; ++j) {
                sc.pooled[j] += sc.down(t, j);
            }
        }
        for (double& v : sc.pooled) {
            v /= static_cast<double>(len);
        }
        std::vector<double> logits(cfg.num_classes, 0.0);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
                acc += sc.pooled[j] * wcls(j, c);
            }
            logits[c] = acc;
        }
        sc.prob = softmax_vec(logits);
        loss -= std::log(std::max(sc.prob[batch.labels[s]], 1e-300));
        if (cache) {
            cache->seqs.push_back(std::move(sc));
        }
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss)) {
        throw NumericalError("forward: non-finite loss (transformer)");
    }
    return loss;
}

GradSet convex_backward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                        const ForwardCache& cache) {
    const Matrix& w = params.at("W").value;
    const std::size_t b = batch.size();
    Matrix grad(w.rows(), w.cols());
    for (std::size_t s = 0; s < b; ++s) {
        const auto& x = batch.features[s];
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            const double delta =
                cache.probs(s, c) - (static_cast<std::size_t>(batch.labels[s]) == c ? 1.0 : 0.0);
            for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
                grad(c, j) += delta * x[j];
            }
        }
    }
    grad *= 1.0 / static_cast<double>(b);
    if (cfg.l2_lambda != 0.0) {
        grad.add_scaled(w, cfg.l2_lambda);
    }
    GradSet gs;
    if (params.at("W").trainable) {
        gs.add("W", std::move(grad));
    }
    return gs;
}

GradSet transformer_backward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                             const ForwardCache& cache) {
    const Matrix& emb = params.at("Emb").value;
    const Matrix& wq = params.at("Wq").value;
    const Matrix& wk = params.at("Wk").value;
    const Matrix& wv = params.at("Wv").value;
    const Matrix& wo = params.at("Wo").value;
    const Matrix& wup = params.at("Wup").value;
    const Matrix& wdown = params.at("Wdown").value;
    const Matrix& wcls = params.at("Wcls").value;
    const std::size_t h = cfg.hidden;
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Matrix g_emb(emb.rows(), emb.cols());
    Matrix g_wq(h, h), g_wk(h, h), g_wv(h, h), g_wo(h, h);
    Matrix g_wup(wup.rows(), wup.cols());
    Matrix g_wdown(wdown.rows(), wdown.cols());
    Matrix g_wcls(wcls.rows(), wcls.cols());

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const ForwardCache::SeqCache& sc = cache.seqs[s];
        const std::size_t len = batch.tokens[s].size();
        const double inv_len = 1.0 / static_cast<double>(len);

        // classifier
        std::vector<double> g_logits(cfg.num_classes);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            g_logits[c] =
                (sc.prob[c] -
                 (static_cast<std::size_t>(batch.labels[s]) == c ? 1.0 : 0.0)) *
                inv_b;
        }
        std::vector<double> g_pooled(h, 0.0);
        for (std::size_t j = 0; j < h; ++j) {
            for (std::size_t c = 0; c < cfg.num_classes; ++c) {
                g_wcls(j, c) += sc.pooled[j] * g_logits[c];
                g_pooled[j] += wcls(j, c) * g_logits[c];
            }
        }

        // mean pool -> down projection rows
        Matrix g_down(len, h);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < h; ++j) {
                g_down(t, j) = g_pooled[j] * inv_len;
            }
        }

        // project-down / tanh / project-up
        g_wdown += matmul(transpose(sc.up_act), g_down);
        Matrix g_up_act = matmul(g_down, transpose(wdown));
        Matrix g_up = g_up_act;
        for (std::size_t i = 0; i < g_up.size(); ++i) {
            const double a = sc.up_act.data()[i];
            g_up.data()[i] *= 1.0 - a * a;
        }
        g_wup += matmul(transpose(sc.o), g_up);
        Matrix g_o = matmul(g_up, transpose(wup));

        // attention output projection
        g_wo += matmul(transpose(sc.z), g_o);
        Matrix g_z = matmul(g_o, transpose(wo));

        // attention weights and values
        Matrix g_attn = matmul(g_z, transpose(sc.v));
        Matrix g_v = matmul(transpose(sc.attn), g_z);
        // softmax rows backward: g_scores = attn .* (g_attn - rowsum(g_attn .* attn))
        Matrix g_scores(len, len);
        for (std::size_t i = 0; i < len; ++i) {
            double row_dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                row_dot += g_attn(i, j) * sc.attn(i, j);
            }
            for (std::size_t j = 0; j < len; ++j) {
                g_scores(i, j) = sc.attn(i, j) * (g_attn(i, j) - row_dot);
            }
        }
        g_scores *= inv_sqrt_h;
        Matrix g_q = matmul(g_scores, sc.k);
        Matrix g_k = matmul(transpose(g_scores), sc.q);

        g_wq += matmul(transpose(sc.x), g_q);
        g_wk += matmul(transpose(sc.x), g_k);
        g_wv += matmul(transpose(sc.x), g_v);

        // embedding rows
        Matrix g_x = matmul(g_q, transpose(wq));
        g_x += matmul(g_k, transpose(wk));
        g_x += matmul(g_v, transpose(wv));
        for (std::size_t t = 0; t < len; ++t) {
            const std::size_t row = static_cast<std::size_t>(batch.tokens[s][t]);
            for (std::size_t j = 0; j < h; ++j) {
                g_emb(row, j) += g_x(t, j);
            }
        }
    }

    GradSet gs;
    auto maybe_add = [&](const char* name, Matrix& g) {
        if (params.at(name).trainable) {
            gs.add(name, std::move(g));
        }
    };
    maybe_add("Emb", g_emb);
    maybe_add("Wq", g_wq);
    maybe_add("Wk", g_wk);
    maybe_add("Wv", g_wv);
    maybe_add("Wo", g_wo);
    maybe_add("Wup", g_wup);
    maybe_add("Wdown", g_wdown);
    maybe_add("Wcls", g_wcls);
    return gs;
}

} // namespace

std::pair<double, ForwardCache> forward(const ParamSet& params, const ModelConfig& cfg,
                                        const Batch& batch) {
    cfg.validate();
    validate_batch(cfg, batch);
    ForwardCache cache;
    double loss = cfg.family == ModelFamily::convex
                      ? convex_forward(params, cfg, batch, &cache)
                      : transformer_forward(params, cfg, batch, &cache);
    cache.fingerprint = cache_fingerprint(params, batch);
    return {loss, std::move(cache)};
}

double loss_only(const ParamSet& params, const ModelConfig& cfg, const Batch& batch) {
    cfg.validate();
    validate_batch(cfg, batch);
    return cfg.family == ModelFamily::convex
               ? convex_forward(params, cfg, batch, nullptr)
               : transformer_forward(params, cfg, batch, nullptr);
}

GradSet backward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                 const ForwardCache& cache) {
    if (cache.fingerprint != cache_fingerprint(params, batch)) {
        throw ContractError("backward: cache does not match (params, batch); rerun forward");
    }
    return cfg.family == ModelFamily::convex ? convex_backward(params, cfg, batch, cache)
                                             : transformer_backward(params, cfg, batch, cache);
}

GradSet finite_diff_grad(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                         double h) {
    if (h < 1e-7 || h > 1e-3) {
        throw ContractError("finite_diff_grad: h must lie in [1e-7, 1e-3]");
    }
    ParamSet work = params;
    GradSet gs;
    for (auto& p : work) {
        if (!p.trainable) {
            continue;
        }
        Matrix grad(p.value.rows(), p.value.cols());
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double up = loss_only(work, cfg, batch);
            p.value.data()[i] = saved - h;
            const double down = loss_only(work, cfg, batch);
            p.value.data()[i] = saved;
            grad.data()[i] = (up - down) / (2.0 * h);
        }
        gs.add(p.name, std::move(grad));
    }
    return gs;
}

std::vector<std::int32_t> predict(const ParamSet& params, const ModelConfig& cfg,
                                  const Batch& batch) {
    auto [loss, cache] = forward(params, cfg, batch);
    (void)loss;
    std::vector<std::int32_t> out(batch.size());
    if (cfg.family == ModelFamily::convex) {
        for (std::size_t s = 0; s < batch.size(); ++s) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < cfg.num_classes; ++c) {
                if (cache.probs(s, c) > cache.probs(s, best)) {
                    best = c;
                }
            }
            out[s] = static_cast<std::int32_t>(best);
        }
    } else {
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto& p = cache.seqs[s].prob;
            out[s] = static_cast<std::int32_t>(
                std::max_element(p.begin(), p.end()) - p.begin());
        }
    }
    return out;
}

} // namespace fedsim
