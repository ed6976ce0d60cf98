#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"
#include "fedsim/model.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace fedsim;

namespace {

ModelConfig convex_cfg(std::size_t classes = 3, std::size_t dim = 4, double lambda = 1e-3) {
    ModelConfig cfg;
    cfg.family = ModelFamily::convex;
    cfg.num_classes = classes;
    cfg.feature_dim = dim;
    cfg.l2_lambda = lambda;
    return cfg;
}

ModelConfig transformer_cfg() {
    ModelConfig cfg;
    cfg.family = ModelFamily::transformer;
    cfg.num_classes = 3;
    cfg.vocab = 8;
    cfg.hidden = 4;
    cfg.mlp_mult = 2;
    cfg.seq_len = 3;
    return cfg;
}

Batch random_convex_batch(const ModelConfig& cfg, std::size_t n, Rng& rng) {
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(cfg.feature_dim);
        for (double& v : x) {
            v = rng.next_gaussian(1.0);
        }
        b.features.push_back(std::move(x));
        b.labels.push_back(static_cast<std::int32_t>(rng.next_index(cfg.num_classes)));
    }
    return b;
}

Batch random_token_batch(const ModelConfig& cfg, std::size_t n, Rng& rng) {
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::int32_t> toks(cfg.seq_len);
        for (auto& t : toks) {
            t = static_cast<std::int32_t>(rng.next_index(cfg.vocab));
        }
        b.tokens.push_back(std::move(toks));
        b.labels.push_back(static_cast<std::int32_t>(rng.next_index(cfg.num_classes)));
    }
    return b;
}

double max_relative_grad_error(const GradSet& analytic, const GradSet& numeric) {
    double worst = 0.0;
    for (const auto& [name, g] : analytic) {
        const Matrix& fd = numeric.at(name);
        const double scale = std::max(1e-8, std::max(max_abs(g), max_abs(fd)));
        for (std::size_t i = 0; i < g.size(); ++i) {
            worst = std::max(worst, std::abs(g.data()[i] - fd.data()[i]) / scale);
        }
    }
    return worst;
}

} // namespace

TEST_CASE("convex forward: zero weights on a balanced batch give log C") {
    const ModelConfig cfg = convex_cfg(4, 5);
    const ParamSet params = make_params(cfg);
    Rng rng(RngSeed{2});
    Batch b = random_convex_batch(cfg, 8, rng);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
        b.labels[i] = static_cast<std::int32_t>(i % cfg.num_classes);
    }
    auto [loss, cache] = forward(params, cfg, b);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("convex forward: single-sample scalar hand check") {
    ModelConfig cfg = convex_cfg(2, 2, 1e-3);
    ParamSet params = make_params(cfg);
    params.at("W").value = Matrix::from_rows({{0.7, -0.2}, {-1.1, 0.4}});
    Batch b;
    b.features.push_back({1.0, 0.0});
    b.labels.push_back(0);
    // logits = (0.7, -1.1); loss = -log softmax_0 + (lambda/2)||W||^2
    const double z0 = 0.7, z1 = -1.1;
    const double expected_ce = -(z0 - std::log(std::exp(z0) + std::exp(z1)));
    const double reg = 0.5 * 1e-3 * (0.7 * 0.7 + 0.2 * 0.2 + 1.1 * 1.1 + 0.4 * 0.4);
    CHECK(loss_only(params, cfg, b) == doctest::Approx(expected_ce + reg).epsilon(1e-14));

    cfg.l2_lambda = 1e-12; // lambda ~ 0 variant pins the pure CE value
    CHECK(loss_only(params, cfg, b) == doctest::Approx(expected_ce).epsilon(1e-9));
}

TEST_CASE("transformer forward: all-zero weights give log C") {
    const ModelConfig cfg = transformer_cfg();
    const ParamSet params = make_params(cfg);
    Rng rng(RngSeed{3});
    const Batch b = random_token_batch(cfg, 5, rng);
    CHECK(loss_only(params, cfg, b) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("backward matches finite differences: convex family, 20 random instances") {
    const ModelConfig cfg = convex_cfg();
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(RngSeed{trial});
        ParamSet params = make_params(cfg, 0.5, RngSeed{trial + 100});
        const Batch b = random_convex_batch(cfg, 1 + rng.next_index(6), rng);
        auto [loss, cache] = forward(params, cfg, b);
        const GradSet analytic = backward(params, cfg, b, cache);
        const GradSet numeric = finite_diff_grad(params, cfg, b, 1e-5);
        CHECK(max_relative_grad_error(analytic, numeric) <= 1e-5);
    }
}

TEST_CASE("backward matches finite differences: transformer family, 20 random instances") {
    const ModelConfig cfg = transformer_cfg();
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(RngSeed{trial + 7});
        ParamSet params = make_params(cfg, 0.4, RngSeed{trial + 900});
        const Batch b = random_token_batch(cfg, 1 + rng.next_index(4), rng);
        auto [loss, cache] = forward(params, cfg, b);
        const GradSet analytic = backward(params, cfg, b, cache);
        const GradSet numeric = finite_diff_grad(params, cfg, b, 1e-5);
        CHECK(max_relative_grad_error(analytic, numeric) <= 1e-5);
    }
}

TEST_CASE("backward matches finite differences on every selection scheme") {
    const ModelConfig cfg = transformer_cfg();
    for (auto scheme : {SelectionScheme::attention_qkv, SelectionScheme::project_up,
                        SelectionScheme::classifier_and_project_up}) {
        Rng rng(RngSeed{50});
        ParamSet params =
            select_trainable(make_params(cfg, 0.4, RngSeed{51}), cfg, scheme);
        const Batch b = random_token_batch(cfg, 3, rng);
        auto [loss, cache] = forward(params, cfg, b);
        const GradSet analytic = backward(params, cfg, b, cache);
        const GradSet numeric = finite_diff_grad(params, cfg, b, 1e-5);
        CHECK(analytic.size() == scheme_targets(cfg, scheme).size());
        CHECK(max_relative_grad_error(analytic, numeric) <= 1e-5);
    }
}

TEST_CASE("finite differences are exact for a linear-in-W loss") {
    // with lambda = 0 removed by tiny lambda and a one-hot softmax the loss is
    // not linear; instead check the quadratic regularizer path: L = c + reg
    // has gradient lambda * W captured exactly by central differences.
    ModelConfig cfg = convex_cfg(2, 2, 0.5);
    ParamSet params = make_params(cfg, 1.0, RngSeed{9});
    Batch b;
    b.features.push_back({0.0, 0.0}); // CE term constant in W
    b.labels.push_back(1);
    const GradSet numeric = finite_diff_grad(params, cfg, b, 1e-4);
    const Matrix expected = params.at("W").value * 0.5;
    CHECK(frobenius_norm(numeric.at("W") - expected) <= 1e-10);
}

TEST_CASE("finite differences: halving h shrinks error ~4x on a smooth loss") {
    const ModelConfig cfg = transformer_cfg();
    ParamSet params = make_params(cfg, 0.6, RngSeed{77});
    Rng rng(RngSeed{78});
    const Batch b = random_token_batch(cfg, 2, rng);
    auto [loss, cache] = forward(params, cfg, b);
    const GradSet exact = backward(params, cfg, b, cache);
    auto err = [&](double h) {
        const GradSet fd = finite_diff_grad(params, cfg, b, h);
        double worst = 0.0;
        for (const auto& [name, g] : exact) {
            worst = std::max(worst, max_abs(g - fd.at(name)));
        }
        return worst;
    };
    const double e1 = err(8e-4);
    const double e2 = err(4e-4);
    CHECK(e2 <= e1 / 2.5); // order-2 accuracy: expect ~4x, allow slack
}

TEST_CASE("finite_diff_grad rejects h outside [1e-7, 1e-3]") {
    const ModelConfig cfg = convex_cfg();
    const ParamSet params = make_params(cfg);
    Rng rng(RngSeed{1});
    const Batch b = random_convex_batch(cfg, 2, rng);
    CHECK_THROWS_AS(finite_diff_grad(params, cfg, b, 1e-8), ContractError);
    CHECK_THROWS_AS(finite_diff_grad(params, cfg, b, 1e-2), ContractError);
}

TEST_CASE("convex loss is convex in W") {
    const ModelConfig cfg = convex_cfg();
    Rng rng(RngSeed{33});
    const Batch b = random_convex_batch(cfg, 6, rng);
    ParamSet p = make_params(cfg);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix w1 = oracles::random_matrix(cfg.num_classes, cfg.feature_dim, rng);
        const Matrix w2 = oracles::random_matrix(cfg.num_classes, cfg.feature_dim, rng);
        const double t = rng.next_double();
        auto loss_at = [&](const Matrix& w) {
            p.at("W").value = w;
            return loss_only(p, cfg, b);
        };
        const Matrix mix = w1 * t + w2 * (1.0 - t);
        CHECK(loss_at(mix) <= t * loss_at(w1) + (1.0 - t) * loss_at(w2) + 1e-10);
    }
}

TEST_CASE("forward determinism and batch-permutation invariance") {
    const ModelConfig cfg = transformer_cfg();
    const ParamSet params = make_params(cfg, 0.3, RngSeed{8});
    Rng rng(RngSeed{12});
    Batch b = random_token_batch(cfg, 6, rng);
    const double l1 = loss_only(params, cfg, b);
    const double l2 = loss_only(params, cfg, b);
    CHECK(l1 == l2); // bitwise

    Batch permuted;
    for (std::size_t i = b.size(); i > 0; --i) {
        permuted.tokens.push_back(b.tokens[i - 1]);
        permuted.labels.push_back(b.labels[i - 1]);
    }
    CHECK(loss_only(params, cfg, permuted) == doctest::Approx(l1).epsilon(1e-12));
}

TEST_CASE("select_trainable sets exactly the scheme targets") {
    const ModelConfig cfg = transformer_cfg();
    const ParamSet base = make_params(cfg);
    const ParamSet qkv = select_trainable(base, cfg, SelectionScheme::attention_qkv);
    CHECK(qkv.trainable_names() == std::vector<std::string>{"Wq", "Wk", "Wv"});
    const ParamSet up = select_trainable(base, cfg, SelectionScheme::project_up);
    CHECK(up.trainable_names() == std::vector<std::string>{"Wup"});
    const ParamSet cls_up =
        select_trainable(base, cfg, SelectionScheme::classifier_and_project_up);
    CHECK(cls_up.trainable_names() == std::vector<std::string>{"Wup", "Wcls"});

    const ModelConfig cv = convex_cfg();
    CHECK(select_trainable(make_params(cv), cv, SelectionScheme::all).trainable_names() ==
          std::vector<std::string>{"W"});
    CHECK_THROWS_AS(select_trainable(make_params(cv), cv, SelectionScheme::project_up),
                    ContractError);
}

TEST_CASE("backward rejects a stale cache") {
    const ModelConfig cfg = convex_cfg();
    ParamSet params = make_params(cfg, 0.2, RngSeed{4});
    Rng rng(RngSeed{5});
    const Batch b = random_convex_batch(cfg, 3, rng);
    auto [loss, cache] = forward(params, cfg, b);
    params.at("W").value(0, 0) += 1.0; // params changed since forward
    CHECK_THROWS_AS(backward(params, cfg, b, cache), ContractError);
}

TEST_CASE("forward rejects shape mismatches") {
    const ModelConfig cfg = convex_cfg(3, 4);
    const ParamSet params = make_params(cfg);
    Batch b;
    b.features.push_back({1.0, 2.0}); // wrong dimension
    b.labels.push_back(0);
    CHECK_THROWS_AS(loss_only(params, cfg, b), ContractError);
    Batch empty;
    CHECK_THROWS_AS(loss_only(params, cfg, empty), ContractError);
}
