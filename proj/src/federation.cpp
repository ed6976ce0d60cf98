#include "fedsim/federation.hpp"

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedsim {

AggregationKind parse_aggregation_kind(std::string_view name) {
    if (name == "direct") {
        return AggregationKind::direct;
    }
    if (name == "fedit") {
        return AggregationKind::fedit;
    }
    if (name == "flexlora") {
        return AggregationKind::flexlora;
    }
    if (name == "ffalora") {
        return AggregationKind::ffalora;
    }
    throw ContractError("unknown aggregation kind '" + std::string(name) + "'");
}

std::string to_string(AggregationKind kind) {
    switch (kind) {
    case AggregationKind::direct:
        return "direct";
    case AggregationKind::fedit:
        return "fedit";
    case AggregationKind::flexlora:
        return "flexlora";
    case AggregationKind::ffalora:
        return "ffalora";
    }
    throw ContractError("invalid aggregation kind");
}

namespace {

std::vector<double> client_weights(const std::vector<ClientState>& clients, Weighting weighting) {
    const std::size_t n = clients.size();
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    if (weighting == Weighting::by_train_size) {
        double total = 0.0;
        for (const auto& c : clients) {
            total += static_cast<double>(c.train_size());
        }
        if (total <= 0.0) {
            throw ContractError("aggregate: no training samples for size weighting");
        }
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = static_cast<double>(clients[i].train_size()) / total;
        }
    }
    return w;
}

void require_clients(const std::vector<ClientState>& clients, bool with_pairs) {
    if (clients.empty()) {
        throw ContractError("aggregate: no clients");
    }
    if (with_pairs) {
        const auto& ref = clients.front().pairs;
        if (ref.empty()) {
            throw ContractError("aggregate: strategy requires attached adapters");
        }
        for (const auto& c : clients) {
            if (c.pairs.size() != ref.size()) {
                throw ContractError("aggregate: clients disagree on adapter count");
            }
            for (std::size_t p = 0; p < ref.size(); ++p) {
                if (c.pairs[p].target_name != ref[p].target_name ||
                    c.pairs[p].rank != ref[p].rank) {
                    throw ContractError("aggregate: adapter target/rank mismatch across clients");
                }
            }
        }
    }
}

} // namespace

ParamSet aggregate_direct(const std::vector<ClientState>& clients, Weighting weighting) {
    require_clients(clients, false);
    const auto w = client_weights(clients, weighting);
    ParamSet global = clients.front().params;
    for (auto& p : global) {
        if (!p.trainable) {
            continue; // identical across clients by the broadcast invariant
        }
        Matrix acc(p.value.rows(), p.value.cols());
        for (std::size_t i = 0; i < clients.size(); ++i) {
            const Param& cp = clients[i].params.at(p.name);
            if (!cp.value.same_shape(p.value) || !cp.trainable) {
                throw ContractError("aggregate_direct: trainable set mismatch for '" + p.name +
                                    "'");
            }
            acc.add_scaled(cp.value, w[i]);
        }
        p.value = std::move(acc);
    }
    return global;
}

std::vector<LoraPair> aggregate_fedit(const std::vector<ClientState>& clients) {
    require_clients(clients, true);
    const double inv_n = 1.0 / static_cast<double>(clients.size());
    std::vector<LoraPair> out = clients.front().pairs;
    for (std::size_t p = 0; p < out.size(); ++p) {
        Matrix b_acc(out[p].b.rows(), out[p].b.cols());
        Matrix a_acc(out[p].a.rows(), out[p].a.cols());
        for (const auto& c : clients) {
            b_acc.add_scaled(c.pairs[p].b, inv_n);
            a_acc.add_scaled(c.pairs[p].a, inv_n);
        }
        out[p].b = std::move(b_acc);
        out[p].a = std::move(a_acc);
    }
    return out;
}

FlexloraResult aggregate_flexlora(const std::vector<ClientState>& clients, Weighting weighting,
                                  std::size_t r_target, bool sqrt_split) {
    require_clients(clients, true);
    const auto w = client_weights(clients, weighting);
    FlexloraResult res;
    res.pairs = clients.front().pairs;
    for (std::size_t p = 0; p < res.pairs.size(); ++p) {
        LoraPair& pair = res.pairs[p];
        const std::size_t d = pair.b.rows();
        const std::size_t k = pair.a.cols();
        if (r_target < 1 || r_target > std::min(d, k)) {
            throw ContractError("aggregate_flexlora: r_target out of range");
        }
        Matrix merged(d, k);
        for (std::size_t i = 0; i < clients.size(); ++i) {
            merged.add_scaled(effective_update(clients[i].pairs[p]), w[i]);
        }
        SvdResult dec = svd_truncated(merged, r_target);
        svd_fix_signs(dec);
        // discarded tail mass of the pre-truncation aggregate
        SvdResult full = svd(merged);
        double total = 0.0, tail = 0.0;
        for (std::size_t j = 0; j < full.singular_values.size(); ++j) {
            const double s2 = full.singular_values[j] * full.singular_values[j];
            total += s2;
            if (j >= r_target) {
                tail += s2;
            }
        }
        res.tail_mass.push_back(total > 0.0 ? tail / total : 0.0);

        // fold singular values into B (or split as sqrt(s) on both factors);
        // scale divides out so that scale * B * A reproduces the truncation
        Matrix b(d, r_target);
        Matrix a = dec.vt;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < r_target; ++j) {
                const double s = sqrt_split ? std::sqrt(dec.singular_values[j])
                                            : dec.singular_values[j];
                b(i, j) = dec.u(i, j) * s / pair.scale;
            }
        }
        if (sqrt_split) {
            for (std::size_t i = 0; i < r_target; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    a(i, j) *= std::sqrt(dec.singular_values[i]);
                }
            }
        }
        pair.b = std::move(b);
        pair.a = std::move(a);
        pair.rank = r_target;
        res.merged_updates.push_back(std::move(merged));
    }
    return res;
}

std::vector<LoraPair> aggregate_ffalora(const std::vector<ClientState>& clients,
                                        Weighting weighting) {
    require_clients(clients, true);
    const auto w = client_weights(clients, weighting);
    std::vector<LoraPair> out = clients.front().pairs;
    for (std::size_t p = 0; p < out.size(); ++p) {
        for (const auto& c : clients) {
            if (!bitwise_equal(c.pairs[p].a, out[p].a)) {
                throw ContractError("aggregate_ffalora: frozen A diverged across clients for '" +
                                    out[p].target_name + "'");
            }
        }
        Matrix b_acc(out[p].b.rows(), out[p].b.cols());
        for (std::size_t i = 0; i < clients.size(); ++i) {
            b_acc.add_scaled(clients[i].pairs[p].b, w[i]);
        }
        out[p].b = std::move(b_acc);
    }
    return out;
}

void broadcast(const ParamSet& global, std::vector<ClientState>& clients) {
    for (auto& c : clients) {
        for (const auto& p : global) {
            if (!p.trainable) {
                continue;
            }
            Param& cp = c.params.at(p.name);
            if (!cp.value.same_shape(p.value)) {
                throw ContractError("broadcast: shape mismatch for '" + p.name + "'");
            }
            cp.value = p.value;
        }
    }
}

void broadcast_pairs(const std::vector<LoraPair>& global_pairs, std::vector<ClientState>& clients,
                     bool b_only) {
    for (auto& c : clients) {
        if (c.pairs.size() != global_pairs.size()) {
            throw ContractError("broadcast_pairs: adapter count mismatch");
        }
        for (std::size_t p = 0; p < global_pairs.size(); ++p) {
            c.pairs[p].b = global_pairs[p].b;
            c.pairs[p].rank = global_pairs[p].rank;
            if (!b_only) {
                c.pairs[p].a = global_pairs[p].a;
            }
        }
    }
}

namespace {

struct EvalOutcome {
    double loss = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
};

EvalOutcome evaluate(const ParamSet& params, const ModelConfig& cfg, const LabeledDataset& ds) {
    const Batch batch = full_batch(ds);
    EvalOutcome out;
    out.loss = loss_only(params, cfg, batch);
    const std::vector<std::int32_t> pred = predict(params, cfg, batch);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == batch.labels[i]) {
            ++hits;
        }
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    out.f1 = macro_f1(pred, batch.labels, cfg.num_classes);
    return out;
}

// Pseudo parameter set over adapter factors so that the generic optimizer
// steps apply; names are target/B and target/A.
ParamSet adapter_param_view(const std::vector<LoraPair>& pairs) {
    ParamSet ps;
    for (const auto& pair : pairs) {
        ps.add(pair.target_name + "/B", pair.b, true);
        if (!pair.frozen_a) {
            ps.add(pair.target_name + "/A", pair.a, true);
        }
    }
    return ps;
}

struct EngineContext {
    const FederatedTask& task;
    const RunOptions& opt;
    ModelConfig model;
    std::vector<std::string> targets;
    std::string trace;
    std::size_t tail_rank = 0; // 0 = tail mass not logged
};

void validate_run(EngineContext& ctx) {
    const RunOptions& opt = ctx.opt;
    ctx.model.validate();
    if (ctx.task.train_shards.empty()) {
        throw ContractError("run_training: no train shards");
    }
    const bool adapter_kind = opt.strategy.kind != AggregationKind::direct;
    if (opt.use_adapters != adapter_kind) {
        throw ContractError("run_training: strategy '" + to_string(opt.strategy.kind) +
                            "' requires use_adapters == " + (adapter_kind ? "true" : "false"));
    }
    if (opt.strategy.kind == AggregationKind::ffalora && !opt.frozen_a) {
        throw ContractError("run_training: ffalora requires frozen_a");
    }
    if ((opt.strategy.kind == AggregationKind::fedit ||
         opt.strategy.kind == AggregationKind::flexlora) &&
        opt.frozen_a) {
        throw ContractError("run_training: fedit/flexlora train both adapter factors");
    }
    const bool galore = opt.optimizer == OptimizerKind::galore_sgd ||
                        opt.optimizer == OptimizerKind::galore_adam;
    if (galore && opt.use_adapters) {
        throw ContractError("run_training: galore applies to direct weight runs only");
    }
    if (opt.schedule.epochs < 1 || opt.schedule.t_agg < 1 || opt.schedule.batch_size < 1) {
        throw ContractError("run_training: schedule fields must be >= 1");
    }
    if (opt.lr <= 0.0) {
        throw ContractError("run_training: lr must be positive");
    }
    for (const auto& shard : ctx.task.train_shards) {
        shard.validate();
        if (shard.num_classes > ctx.model.num_classes) {
            throw ContractError("run_training: shard classes exceed model classes");
        }
    }
    if (!opt.exec_order.empty()) {
        std::vector<int> sorted = opt.exec_order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != static_cast<int>(i) ||
                sorted.size() != ctx.task.train_shards.size()) {
                throw ContractError("run_training: exec_order must permute client ids");
            }
        }
    }
}

} // namespace

RunResult run_training(const FederatedTask& task, const RunOptions& opt, StepObserver* observer) {
    EngineContext ctx{task, opt, task.model, {}, {}, 0};
    validate_run(ctx);
    const std::size_t n_clients = task.train_shards.size();
    const RngSeed seed = opt.schedule.seed;

    // global model
    ParamSet global = make_params(ctx.model, opt.init_std, derive_seed(seed, "model-init"));
    global = select_trainable(std::move(global), ctx.model, opt.selection);
    ctx.targets = scheme_targets(ctx.model, opt.selection);
    std::vector<LoraPair> global_pairs;
    if (opt.use_adapters) {
        global_pairs = attach_lora(global, ctx.targets, opt.adapter_rank, opt.adapter_scale,
                                   opt.adapter_std, opt.frozen_a, derive_seed(seed, "adapter"));
    }
    ctx.trace = opt.use_adapters
                    ? ctx.targets.front()
                    : (ctx.model.family == ModelFamily::convex
                           ? std::string("W")
                           : (global.at("Wup").trainable ? std::string("Wup") : ctx.targets.front()));
    const bool galore = opt.optimizer == OptimizerKind::galore_sgd ||
                        opt.optimizer == OptimizerKind::galore_adam;
    if (opt.use_adapters) {
        ctx.tail_rank = opt.strategy.flexlora_rank > 0 ? opt.strategy.flexlora_rank
                                                       : opt.adapter_rank;
    } else if (galore) {
        ctx.tail_rank = opt.galore_rank;
    }

    // reference values for the bound calculators
    const Matrix w0_trace = opt.use_adapters
                                ? merge_lora(global.at(ctx.trace).value, global_pairs.front())
                                : global.at(ctx.trace).value;
    const double b0_norm = spectral_norm(w0_trace);
    double a0_gram_norm = 0.0;
    if (opt.strategy.kind == AggregationKind::ffalora) {
        const Matrix& a0 = global_pairs.front().a;
        a0_gram_norm = spectral_norm(matmul(transpose(a0), a0));
    }

    RunResult result;
    result.trace_param = ctx.trace;
    result.w0_spectral_norm = b0_norm;
    double w_star_loss = 0.0;
    double w_star_dist = 0.0; // ||W* - W0||_2 of the trace matrix
    if (ctx.model.family == ModelFamily::convex && opt.compute_excess_risk &&
        !task.pooled_train.empty()) {
        result.w_star = compute_w_star(task.pooled_train, ctx.model);
        w_star_loss = loss_only(*result.w_star, ctx.model, full_batch(task.pooled_train));
        w_star_dist = spectral_norm(result.w_star->at("W").value - w0_trace);
    }

    // clients
    std::vector<ClientState> clients;
    clients.reserve(n_clients);
    std::size_t min_shard = task.train_shards.front().size();
    for (std::size_t i = 0; i < n_clients; ++i) {
        min_shard = std::min(min_shard, task.train_shards[i].size());
        ClientState c;
        c.id = static_cast<int>(i);
        c.shard = &task.train_shards[i];
        c.params = global;
        c.pairs = global_pairs;
        c.lr = opt.lr;
        if (opt.optimizer == OptimizerKind::adam) {
            AdamState st;
            st.cfg = opt.adam;
            st.cfg.lr = opt.lr;
            st.init(opt.use_adapters ? adapter_param_view(c.pairs) : c.params);
            c.adam = std::move(st);
        } else if (galore) {
            GaloreState st;
            st.cfg.rank = opt.galore_rank;
            st.cfg.refresh_period = opt.galore_period;
            st.cfg.scale = opt.galore_scale;
            st.cfg.reset_inner_on_refresh = opt.galore_reset_on_refresh;
            st.cfg.inner = opt.optimizer == OptimizerKind::galore_sgd ? InnerRegularizer::sgd
                                                                      : InnerRegularizer::adam;
            st.cfg.sgd.lr = opt.lr;
            st.cfg.adam = opt.adam;
            st.cfg.adam.lr = opt.lr;
            st.init(c.params);
            c.galore = std::move(st);
        }
        clients.push_back(std::move(c));
    }
    if (static_cast<std::size_t>(opt.schedule.batch_size) > min_shard) {
        throw DataError("run_training: batch_size exceeds the smallest shard");
    }
    const int steps_per_epoch = opt.schedule.steps_per_epoch > 0
                                    ? opt.schedule.steps_per_epoch
                                    : static_cast<int>(min_shard) / opt.schedule.batch_size;
    if (steps_per_epoch < 1) {
        throw DataError("run_training: empty epoch schedule");
    }
    result.steps_per_epoch = steps_per_epoch;

    std::vector<int> exec_order = opt.exec_order;
    if (exec_order.empty()) {
        exec_order.resize(n_clients);
        std::iota(exec_order.begin(), exec_order.end(), 0);
    }

    Matrix prev_global_trace = w0_trace;
    double max_grad_norm = 0.0;
    int round = 0;

    auto local_step = [&](ClientState& c, const Batch& batch, double& loss_out,
                          GradSet& weight_grads_out) {
        if (!opt.use_adapters) {
            auto [loss, cache] = forward(c.params, ctx.model, batch);
            GradSet grads = backward(c.params, ctx.model, batch, cache);
            if (opt.optimizer == OptimizerKind::sgd) {
                sgd_step(c.params, grads, SgdConfig{c.lr});
            } else if (opt.optimizer == OptimizerKind::adam) {
                adam_step(*c.adam, c.params, grads);
            } else {
                galore_step(*c.galore, c.params, grads);
            }
            loss_out = loss;
            weight_grads_out = std::move(grads);
            return;
        }
        ParamSet merged = materialize_merged(c.params, c.pairs);
        auto [loss, cache] = forward(merged, ctx.model, batch);
        GradSet weight_grads = backward(merged, ctx.model, batch, cache);
        ParamSet ap = adapter_param_view(c.pairs);
        GradSet ag;
        for (const auto& pair : c.pairs) {
            LoraGrads lg = lora_backward_map(weight_grads.at(pair.target_name), pair);
            ag.add(pair.target_name + "/B", std::move(lg.b));
            if (lg.a) {
                ag.add(pair.target_name + "/A", std::move(*lg.a));
            }
        }
        if (opt.optimizer == OptimizerKind::sgd) {
            sgd_step(ap, ag, SgdConfig{c.lr});
        } else {
            adam_step(*c.adam, ap, ag);
        }
        for (auto& pair : c.pairs) {
            pair.b = ap.at(pair.target_name + "/B").value;
            if (!pair.frozen_a) {
                pair.a = ap.at(pair.target_name + "/A").value;
            }
        }
        loss_out = loss;
        weight_grads_out = std::move(weight_grads);
    };

    for (int epoch = 1; epoch <= opt.schedule.epochs; ++epoch) {
        // per-epoch sample order; one shared stream so equal shards get equal orders
        std::vector<std::vector<std::size_t>> orders(n_clients);
        for (std::size_t i = 0; i < n_clients; ++i) {
            orders[i].resize(clients[i].train_size());
            std::iota(orders[i].begin(), orders[i].end(), 0);
            Rng rng(derive_seed(seed, "batch-order", static_cast<std::uint64_t>(epoch)));
            rng.shuffle(orders[i]);
        }
        for (int iter = 1; iter <= steps_per_epoch; ++iter) {
            std::vector<MetricsRecord> step_rows(n_clients);
            for (int cid : exec_order) {
                ClientState& c = clients[static_cast<std::size_t>(cid)];
                const std::size_t m = c.train_size();
                std::vector<std::size_t> idx(static_cast<std::size_t>(opt.schedule.batch_size));
                const std::size_t start =
                    (static_cast<std::size_t>(iter - 1) * idx.size()) % m;
                for (std::size_t j = 0; j < idx.size(); ++j) {
                    idx[j] = orders[static_cast<std::size_t>(cid)][(start + j) % m];
                }
                const Batch batch = make_batch(*c.shard, idx);
                double loss = 0.0;
                GradSet weight_grads;
                local_step(c, batch, loss, weight_grads);
                if (observer) {
                    observer->on_local_step(cid, epoch, round + 1, iter, weight_grads, c);
                }
                MetricsRecord& row = step_rows[static_cast<std::size_t>(cid)];
                row.epoch = epoch;
                row.round = round + 1;
                row.local_step = iter;
                row.client_id = std::to_string(cid);
                row.loss = loss;
                if (weight_grads.has(ctx.trace)) {
                    row.grad_spectral_norm = spectral_norm(weight_grads.at(ctx.trace));
                }
            }
            for (auto& row : step_rows) {
                if (row.grad_spectral_norm) {
                    max_grad_norm = std::max(max_grad_norm, *row.grad_spectral_norm);
                }
                result.metrics.push_back(std::move(row));
            }

            if (iter % opt.schedule.t_agg != 0 && iter != steps_per_epoch) {
                continue;
            }
            ++round;

            Matrix agg_update;
            std::optional<double> tail_mass;
            switch (opt.strategy.kind) {
            case AggregationKind::direct: {
                ParamSet agg = aggregate_direct(clients, opt.strategy.weighting);
                for (auto& p : global) {
                    if (p.trainable) {
                        p.value = agg.at(p.name).value;
                    }
                }
                agg_update = global.at(ctx.trace).value - prev_global_trace;
                break;
            }
            case AggregationKind::fedit: {
                global_pairs = aggregate_fedit(clients);
                agg_update = effective_update(global_pairs.front());
                break;
            }
            case AggregationKind::flexlora: {
                FlexloraResult flex = aggregate_flexlora(clients, opt.strategy.weighting,
                                                         ctx.tail_rank,
                                                         opt.strategy.flexlora_sqrt_split);
                global_pairs = std::move(flex.pairs);
                agg_update = std::move(flex.merged_updates.front());
                tail_mass = flex.tail_mass.front();
                break;
            }
            case AggregationKind::ffalora: {
                global_pairs = aggregate_ffalora(clients, opt.strategy.weighting);
                agg_update = effective_update(global_pairs.front());
                break;
            }
            }

            const ParamSet merged_global =
                opt.use_adapters ? materialize_merged(global, global_pairs) : global;
            const EvalOutcome eval = evaluate(merged_global, ctx.model, task.pooled_eval);

            MetricsRecord row;
            row.epoch = epoch;
            row.round = round;
            row.client_id = "global";
            row.eval_loss = eval.loss;
            row.accuracy = eval.accuracy;
            row.macro_f1 = eval.f1;
            row.agg_update_rank = static_cast<int>(numerical_rank(agg_update));
            if (!tail_mass && ctx.tail_rank > 0) {
                tail_mass = rank_trace(agg_update, ctx.tail_rank).tail_mass;
            }
            row.svd_tail_mass = tail_mass;
            const Matrix& entropy_src = merged_global.has("Wup")
                                            ? merged_global.at("Wup").value
                                            : merged_global.at(ctx.trace).value;
            row.entropy_wup = row_softmax_entropy(entropy_src);
            row.weight_spectral_norm = spectral_norm(merged_global.at(ctx.trace).value);
            if (result.w_star) {
                row.excess_risk = loss_only(merged_global, ctx.model,
                                            full_batch(task.pooled_train)) -
                                  w_star_loss;
                BoundInputs b;
                b.grad_bound = max_grad_norm;
                b.num_clients = static_cast<double>(n_clients);
                b.rounds = static_cast<double>(round);
                b.t_agg = static_cast<double>(opt.schedule.t_agg);
                b.learning_rate = opt.lr;
                b.w_star_norm = w_star_dist;
                if (opt.strategy.kind == AggregationKind::direct) {
                    b.constant_c = max_grad_norm * w_star_dist;
                    row.bound_direct = bound_direct(b);
                } else if (opt.strategy.kind == AggregationKind::ffalora) {
                    b.constant_c = a0_gram_norm;
                    row.bound_ffalora = bound_ffalora(b);
                }
            }
            result.metrics.push_back(std::move(row));

            // synchronize clients
            if (opt.strategy.kind == AggregationKind::direct) {
                broadcast(global, clients);
                prev_global_trace = global.at(ctx.trace).value;
            } else {
                broadcast_pairs(global_pairs, clients,
                                opt.strategy.kind == AggregationKind::ffalora);
            }
            for (auto& c : clients) {
                if (c.galore && opt.galore_refresh_after_broadcast) {
                    c.galore->force_refresh = true;
                }
            }
            if (observer) {
                observer->on_aggregation(round, global, global_pairs, clients);
            }
        }
    }

    result.global = std::move(global);
    result.global_pairs = std::move(global_pairs);
    result.total_rounds = round;
    return result;
}

} // namespace fedsim
