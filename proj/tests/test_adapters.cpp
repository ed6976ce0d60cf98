#include "fedsim/adapters.hpp"
#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"
#include "fedsim/optim.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace fedsim;

namespace {

ModelConfig convex_cfg() {
    ModelConfig cfg;
    cfg.family = ModelFamily::convex;
    cfg.num_classes = 3;
    cfg.feature_dim = 6;
    cfg.l2_lambda = 1e-3;
    return cfg;
}

Batch random_batch(const ModelConfig& cfg, std::size_t n, Rng& rng) {
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

} // namespace

TEST_CASE("attach_lora: zero B means merged weight equals the base") {
    const ModelConfig cfg = convex_cfg();
    ParamSet params = make_params(cfg, 0.4, RngSeed{3});
    const Matrix base = params.at("W").value;
    auto pairs = attach_lora(params, {"W"}, 2, 2.0, 0.02, false, RngSeed{5});
    REQUIRE(pairs.size() == 1);
    CHECK_FALSE(params.at("W").trainable);
    CHECK(bitwise_equal(merge_lora(params.at("W").value, pairs[0]), base));
    CHECK(frobenius_norm(effective_update(pairs[0])) == 0.0);
}

TEST_CASE("attach_lora: rank 8 scale 16/8 on a 64x64 target keeps update rank <= 8") {
    ModelConfig cfg;
    cfg.family = ModelFamily::transformer;
    cfg.num_classes = 2;
    cfg.vocab = 4;
    cfg.hidden = 64;
    cfg.mlp_mult = 1;
    cfg.seq_len = 2;
    ParamSet params = make_params(cfg, 0.1, RngSeed{7});
    auto pairs = attach_lora(params, {"Wq"}, 8, 16.0 / 8.0, 0.02, false, RngSeed{8});
    Rng rng(RngSeed{9});
    pairs[0].b = oracles::random_matrix(64, 8, rng); // pretend-trained B
    CHECK(numerical_rank(effective_update(pairs[0])) <= 8);
}

TEST_CASE("attach_lora: same seed gives identical A") {
    const ModelConfig cfg = convex_cfg();
    ParamSet p1 = make_params(cfg);
    ParamSet p2 = make_params(cfg);
    auto pairs1 = attach_lora(p1, {"W"}, 2, 1.0, 0.02, false, RngSeed{11});
    auto pairs2 = attach_lora(p2, {"W"}, 2, 1.0, 0.02, false, RngSeed{11});
    CHECK(bitwise_equal(pairs1[0].a, pairs2[0].a));
}

TEST_CASE("attach_lora: contract errors") {
    const ModelConfig cfg = convex_cfg();
    ParamSet params = make_params(cfg);
    CHECK_THROWS_AS(attach_lora(params, {"missing"}, 2, 1.0, 0.02, false, RngSeed{1}),
                    ContractError);
    CHECK_THROWS_AS(attach_lora(params, {"W"}, 99, 1.0, 0.02, false, RngSeed{1}), ContractError);
}

TEST_CASE("effective_update: unit outer product and rank bound") {
    LoraPair pair;
    pair.target_name = "W";
    pair.rank = 1;
    pair.scale = 2.0;
    pair.b = Matrix(4, 1);
    pair.b(0, 0) = 1.0;
    pair.a = Matrix(1, 5);
    pair.a(0, 0) = 1.0;
    const Matrix update = effective_update(pair);
    CHECK(update(0, 0) == 2.0);
    CHECK(frobenius_norm(update) == 2.0);

    Rng rng(RngSeed{13});
    LoraPair rnd;
    rnd.rank = 3;
    rnd.scale = 1.5;
    rnd.b = oracles::random_matrix(7, 3, rng);
    rnd.a = oracles::random_matrix(3, 9, rng);
    CHECK(numerical_rank(effective_update(rnd)) <= 3);
}

TEST_CASE("merge_lora: merge then subtract recovers the base") {
    Rng rng(RngSeed{17});
    const Matrix base = oracles::random_matrix(5, 4, rng);
    LoraPair pair;
    pair.rank = 2;
    pair.scale = 0.7;
    pair.b = oracles::random_matrix(5, 2, rng);
    pair.a = oracles::random_matrix(2, 4, rng);
    const Matrix merged = merge_lora(base, pair);
    CHECK(frobenius_norm((merged - effective_update(pair)) - base) <= 1e-14);
    CHECK_THROWS_AS(merge_lora(Matrix(3, 3), pair), ContractError);
}

TEST_CASE("attached forward equals merged forward") {
    const ModelConfig cfg = convex_cfg();
    Rng rng(RngSeed{19});
    ParamSet params = make_params(cfg, 0.3, RngSeed{20});
    auto pairs = attach_lora(params, {"W"}, 2, 2.0, 0.05, false, RngSeed{21});
    pairs[0].b = oracles::random_matrix(cfg.num_classes, 2, rng); // some trained state
    const Batch b = random_batch(cfg, 5, rng);

    const ParamSet merged_set = materialize_merged(params, pairs);
    const double loss_merged = loss_only(merged_set, cfg, b);

    ParamSet manual = params;
    manual.at("W").value = merge_lora(params.at("W").value, pairs[0]);
    CHECK(std::abs(loss_only(manual, cfg, b) - loss_merged) <= 1e-10);
}

TEST_CASE("lora_backward_map: frozen A produces only grad_B; zero grad_W maps to zero") {
    Rng rng(RngSeed{23});
    LoraPair pair;
    pair.rank = 2;
    pair.scale = 1.3;
    pair.frozen_a = true;
    pair.b = oracles::random_matrix(4, 2, rng);
    pair.a = oracles::random_matrix(2, 6, rng);
    const LoraGrads frozen = lora_backward_map(oracles::random_matrix(4, 6, rng), pair);
    CHECK_FALSE(frozen.a.has_value());

    const LoraGrads zero = lora_backward_map(Matrix(4, 6), pair);
    CHECK(frobenius_norm(zero.b) == 0.0);
}

TEST_CASE("lora_backward_map matches finite differences through the merged forward") {
    const ModelConfig cfg = convex_cfg();
    Rng rng(RngSeed{29});
    ParamSet params = make_params(cfg, 0.3, RngSeed{30});
    auto pairs = attach_lora(params, {"W"}, 2, 1.7, 0.05, false, RngSeed{31});
    pairs[0].b = oracles::random_matrix(cfg.num_classes, 2, rng) * 0.1;
    const Batch batch = random_batch(cfg, 4, rng);

    const ParamSet merged = materialize_merged(params, pairs);
    auto [loss, cache] = forward(merged, cfg, batch);
    const GradSet grad_w = backward(merged, cfg, batch, cache);
    const LoraGrads analytic = lora_backward_map(grad_w.at("W"), pairs[0]);

    // central differences directly on B and A entries
    const double h = 1e-5;
    auto loss_at = [&](const LoraPair& p) {
        return loss_only(materialize_merged(params, {p}), cfg, batch);
    };
    for (std::size_t i = 0; i < pairs[0].b.size(); ++i) {
        LoraPair up = pairs[0], down = pairs[0];
        up.b.data()[i] += h;
        down.b.data()[i] -= h;
        const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
        CHECK(analytic.b.data()[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    REQUIRE(analytic.a.has_value());
    for (std::size_t i = 0; i < pairs[0].a.size(); ++i) {
        LoraPair up = pairs[0], down = pairs[0];
        up.a.data()[i] += h;
        down.a.data()[i] -= h;
        const double fd = (loss_at(up) - loss_at(down)) / (2.0 * h);
        CHECK((*analytic.a).data()[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("frozen A stays bitwise constant through SGD training") {
    const ModelConfig cfg = convex_cfg();
    Rng rng(RngSeed{37});
    ParamSet params = make_params(cfg, 0.3, RngSeed{38});
    auto pairs = attach_lora(params, {"W"}, 2, 2.0, 0.05, true, RngSeed{39});
    const Matrix a0 = pairs[0].a;
    for (int step = 0; step < 20; ++step) {
        const Batch batch = random_batch(cfg, 3, rng);
        const ParamSet merged = materialize_merged(params, pairs);
        auto [loss, cache] = forward(merged, cfg, batch);
        const GradSet grad_w = backward(merged, cfg, batch, cache);
        const LoraGrads lg = lora_backward_map(grad_w.at("W"), pairs[0]);
        pairs[0].b.add_scaled(lg.b, -0.05);
        CHECK_FALSE(lg.a.has_value());
    }
    CHECK(bitwise_equal(pairs[0].a, a0));
}

TEST_CASE("FFA closed form: B-only SGD yields dW = -lr * sum(grad_W) * A0^T A0 * scale^2") {
    const ModelConfig cfg = convex_cfg();
    Rng rng(RngSeed{41});
    ParamSet params = make_params(cfg, 0.3, RngSeed{42});
    const double scale = 1.6, lr = 0.07;
    auto pairs = attach_lora(params, {"W"}, 2, scale, 0.05, true, RngSeed{43});
    const Matrix a0 = pairs[0].a;

    Matrix grad_sum(cfg.num_classes, cfg.feature_dim);
    for (int step = 0; step < 15; ++step) {
        const Batch batch = random_batch(cfg, 4, rng);
        const ParamSet merged = materialize_merged(params, pairs);
        auto [loss, cache] = forward(merged, cfg, batch);
        const GradSet grad_w = backward(merged, cfg, batch, cache);
        grad_sum += grad_w.at("W");
        const LoraGrads lg = lora_backward_map(grad_w.at("W"), pairs[0]);
        pairs[0].b.add_scaled(lg.b, -lr);
    }
    const Matrix actual = effective_update(pairs[0]);
    Matrix expected = matmul(grad_sum, matmul(transpose(a0), a0));
    expected *= -lr * scale * scale;
    const double rel = frobenius_norm(actual - expected) / frobenius_norm(expected);
    CHECK(rel <= 1e-8);
}
