#include "fedsim/experiment.hpp"

#include "fedsim/csv.hpp"
#include "fedsim/error.hpp"
#include "fedsim/model_io.hpp"
#include "fedsim/text.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fedsim {

namespace {

struct KeyBinding {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string bool_str(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ContractError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double parsed = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) {
        throw ContractError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
    return parsed;
}

long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long parsed = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) {
        throw ContractError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    return parsed;
}

const std::map<std::string, KeyBinding>& key_table() {
    static const std::map<std::string, KeyBinding> table = [] {
        std::map<std::string, KeyBinding> t;
        auto str = [&t](const std::string& key, std::string ExperimentConfig::* field) {
            t[key] = {[field](const ExperimentConfig& c) { return c.*field; },
                      [field](ExperimentConfig& c, const std::string& v) { c.*field = v; }};
        };
        auto real = [&t](const std::string& key, double ExperimentConfig::* field) {
            t[key] = {[field](const ExperimentConfig& c) { return format_double(c.*field); },
                      [field, key](ExperimentConfig& c, const std::string& v) {
                          c.*field = parse_real(key, v);
                      }};
        };
        auto uint = [&t](const std::string& key, std::size_t ExperimentConfig::* field) {
            t[key] = {[field](const ExperimentConfig& c) { return std::to_string(c.*field); },
                      [field, key](ExperimentConfig& c, const std::string& v) {
                          const long long parsed = parse_int(key, v);
                          if (parsed < 0) {
                              throw ContractError("config: key '" + key + "' must be >= 0");
                          }
                          c.*field = static_cast<std::size_t>(parsed);
                      }};
        };
        auto int_ = [&t](const std::string& key, int ExperimentConfig::* field) {
            t[key] = {[field](const ExperimentConfig& c) { return std::to_string(c.*field); },
                      [field, key](ExperimentConfig& c, const std::string& v) {
                          c.*field = static_cast<int>(parse_int(key, v));
                      }};
        };
        auto flag = [&t](const std::string& key, bool ExperimentConfig::* field) {
            t[key] = {[field](const ExperimentConfig& c) { return bool_str(c.*field); },
                      [field, key](ExperimentConfig& c, const std::string& v) {
                          c.*field = parse_bool(key, v);
                      }};
        };

        str("model.family", &ExperimentConfig::model_family);
        uint("model.classes", &ExperimentConfig::model_classes);
        uint("model.feature_dim", &ExperimentConfig::model_feature_dim);
        uint("model.vocab", &ExperimentConfig::model_vocab);
        uint("model.hidden", &ExperimentConfig::model_hidden);
        uint("model.mlp_mult", &ExperimentConfig::model_mlp_mult);
        uint("model.seq_len", &ExperimentConfig::model_seq_len);
        real("model.l2_lambda", &ExperimentConfig::model_l2_lambda);
        real("model.init_std", &ExperimentConfig::model_init_std);

        str("data.source", &ExperimentConfig::data_source);
        str("data.csv", &ExperimentConfig::data_csv);
        uint("data.n", &ExperimentConfig::data_n);
        real("data.cluster_sep", &ExperimentConfig::data_cluster_sep);
        real("data.in_band_prob", &ExperimentConfig::data_in_band_prob);
        uint("data.num_clients", &ExperimentConfig::data_num_clients);
        real("data.dirichlet_alpha", &ExperimentConfig::data_dirichlet_alpha);
        flag("data.equal_sizes", &ExperimentConfig::data_equal_sizes);
        real("data.eval_fraction", &ExperimentConfig::data_eval_fraction);

        str("method", &ExperimentConfig::method);
        str("selection.scheme", &ExperimentConfig::selection_scheme);
        str("weighting", &ExperimentConfig::weighting);

        uint("adapter.rank", &ExperimentConfig::adapter_rank);
        real("adapter.alpha", &ExperimentConfig::adapter_alpha);
        flag("adapter.scale_by_rank", &ExperimentConfig::adapter_scale_by_rank);
        real("adapter.std", &ExperimentConfig::adapter_std);
        uint("flexlora.rank", &ExperimentConfig::flexlora_rank);
        flag("flexlora.sqrt_split", &ExperimentConfig::flexlora_sqrt_split);

        str("optimizer.kind", &ExperimentConfig::optimizer_kind);
        real("optimizer.lr", &ExperimentConfig::optimizer_lr);
        real("optimizer.beta1", &ExperimentConfig::optimizer_beta1);
        real("optimizer.beta2", &ExperimentConfig::optimizer_beta2);
        real("optimizer.eps", &ExperimentConfig::optimizer_eps);
        uint("galore.rank", &ExperimentConfig::galore_rank);
        int_("galore.period", &ExperimentConfig::galore_period);
        real("galore.scale", &ExperimentConfig::galore_scale);
        flag("galore.reset_moments", &ExperimentConfig::galore_reset_moments);
        flag("galore.refresh_on_broadcast", &ExperimentConfig::galore_refresh_on_broadcast);

        int_("schedule.epochs", &ExperimentConfig::schedule_epochs);
        int_("schedule.t_agg", &ExperimentConfig::schedule_t_agg);
        int_("schedule.batch_size", &ExperimentConfig::schedule_batch_size);
        int_("schedule.steps_per_epoch", &ExperimentConfig::schedule_steps_per_epoch);

        t["seed"] = {[](const ExperimentConfig& c) { return std::to_string(c.seed); },
                     [](ExperimentConfig& c, const std::string& v) {
                         c.seed = static_cast<std::uint64_t>(parse_int("seed", v));
                     }};
        str("out", &ExperimentConfig::out_dir);
        return t;
    }();
    return table;
}

} // namespace

void ExperimentConfig::validate() const {
    if (model_family != "convex" && model_family != "transformer") {
        throw ContractError("config: model.family must be convex or transformer");
    }
    if (data_source != "synthetic" && data_source != "csv") {
        throw ContractError("config: data.source must be synthetic or csv");
    }
    if (data_source == "csv" && data_csv.empty()) {
        throw ContractError("config: data.csv path required for csv source");
    }
    static const std::vector<std::string> methods = {"fedftg", "direct_adam", "direct_sgd",
                                                     "fedit",  "flexlora",    "ffalora"};
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
        throw ContractError("config: unknown method '" + method + "'");
    }
    if (optimizer_kind != "sgd" && optimizer_kind != "adam") {
        throw ContractError("config: optimizer.kind must be sgd or adam");
    }
    if (weighting != "uniform" && weighting != "by_train_size") {
        throw ContractError("config: weighting must be uniform or by_train_size");
    }
    if (selection_scheme != "auto") {
        parse_selection_scheme(selection_scheme); // throws on bad value
    }
    if (data_num_clients < 1) {
        throw ContractError("config: data.num_clients must be >= 1");
    }
    model_config().validate();
    scheme_targets(model_config(), resolved_selection()); // scheme/family compatibility
    run_options(); // validates the method/optimizer/adapter combination
}

ModelConfig ExperimentConfig::model_config() const {
    ModelConfig m;
    m.family = model_family == "convex" ? ModelFamily::convex : ModelFamily::transformer;
    m.num_classes = model_classes;
    m.feature_dim = model_feature_dim;
    m.vocab = model_vocab;
    m.hidden = model_hidden;
    m.mlp_mult = model_mlp_mult;
    m.seq_len = model_seq_len;
    m.l2_lambda = model_l2_lambda;
    return m;
}

SelectionScheme ExperimentConfig::resolved_selection() const {
    if (selection_scheme != "auto") {
        return parse_selection_scheme(selection_scheme);
    }
    if (model_family == "convex") {
        return SelectionScheme::all;
    }
    // transformer defaults mirror the experimental setups: direct methods
    // fine-tune project-up + classifier, adapter methods target attention
    const bool adapters = method == "fedit" || method == "flexlora" || method == "ffalora";
    return adapters ? SelectionScheme::attention_qkv
                    : SelectionScheme::classifier_and_project_up;
}

RunOptions ExperimentConfig::run_options() const {
    RunOptions opt;
    const bool adapters = method == "fedit" || method == "flexlora" || method == "ffalora";
    opt.use_adapters = adapters;
    if (method == "fedftg") {
        opt.strategy.kind = AggregationKind::direct;
        opt.optimizer = optimizer_kind == "sgd" ? OptimizerKind::galore_sgd
                                                : OptimizerKind::galore_adam;
    } else if (method == "direct_sgd") {
        opt.strategy.kind = AggregationKind::direct;
        opt.optimizer = OptimizerKind::sgd;
    } else if (method == "direct_adam") {
        opt.strategy.kind = AggregationKind::direct;
        opt.optimizer = OptimizerKind::adam;
    } else {
        opt.strategy.kind = parse_aggregation_kind(method);
        opt.optimizer = optimizer_kind == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    }
    opt.strategy.weighting =
        weighting == "uniform" ? Weighting::uniform : Weighting::by_train_size;
    opt.strategy.flexlora_rank = flexlora_rank;
    opt.strategy.flexlora_sqrt_split = flexlora_sqrt_split;
    opt.selection = resolved_selection();
    opt.adapter_rank = adapter_rank;
    opt.adapter_scale = adapter_scale_by_rank
                            ? adapter_alpha / static_cast<double>(adapter_rank)
                            : adapter_alpha;
    opt.adapter_std = adapter_std;
    opt.frozen_a = method == "ffalora";
    opt.lr = optimizer_lr;
    opt.adam = AdamConfig{optimizer_lr, optimizer_beta1, optimizer_beta2, optimizer_eps};
    opt.galore_rank = galore_rank;
    opt.galore_period = galore_period;
    opt.galore_scale = galore_scale;
    opt.galore_reset_on_refresh = galore_reset_moments;
    opt.galore_refresh_after_broadcast = galore_refresh_on_broadcast;
    opt.schedule.epochs = schedule_epochs;
    opt.schedule.t_agg = schedule_t_agg;
    opt.schedule.batch_size = schedule_batch_size;
    opt.schedule.steps_per_epoch = schedule_steps_per_epoch;
    opt.schedule.seed = RngSeed{seed};
    opt.init_std = model_init_std;
    return opt;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') {
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ContractError("config line " + std::to_string(line_no) +
                                ": expected 'key = value'");
        }
        apply_override(cfg, stripped);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("config: cannot open '" + path + "'");
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos) {
        throw ContractError("config: expected key=value, got '" + key_value + "'");
    }
    const std::string key = trim(key_value.substr(0, eq));
    const std::string value = trim(key_value.substr(eq + 1));
    const auto& table = key_table();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ContractError("config: unknown key '" + key + "'");
    }
    it->second.set(cfg, value);
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, binding] : key_table()) {
        out += key;
        out += " = ";
        out += binding.get(cfg);
        out += '\n';
    }
    return out;
}

namespace {

LabeledDataset build_source_dataset(const ExperimentConfig& cfg) {
    if (cfg.data_source == "csv") {
        LabeledDataset ds = load_csv(cfg.data_csv);
        if (ds.num_classes > cfg.model_classes) {
            throw DataError("data: csv labels exceed model.classes");
        }
        ds.num_classes = cfg.model_classes;
        return ds;
    }
    if (cfg.model_family == "convex") {
        return synth_vectors(cfg.data_n, cfg.model_classes, cfg.model_feature_dim,
                             cfg.data_cluster_sep, derive_seed(RngSeed{cfg.seed}, "data"));
    }
    return synth_sequences(cfg.data_n, cfg.model_classes, cfg.model_vocab, cfg.model_seq_len,
                           derive_seed(RngSeed{cfg.seed}, "data"), cfg.data_in_band_prob);
}

std::vector<LabeledDataset> build_shards(const ExperimentConfig& cfg) {
    PartitionSpec spec;
    spec.num_clients = cfg.data_num_clients;
    spec.alpha = cfg.data_dirichlet_alpha;
    spec.equal_sizes = cfg.data_equal_sizes;
    spec.seed = derive_seed(RngSeed{cfg.seed}, "partition");
    return dirichlet_partition(build_source_dataset(cfg), spec);
}

} // namespace

FederatedTask build_task(const ExperimentConfig& cfg) {
    cfg.validate();
    FederatedTask task;
    task.model = cfg.model_config();
    TrainEvalSplit split = split_train_eval(build_shards(cfg), cfg.data_eval_fraction,
                                            derive_seed(RngSeed{cfg.seed}, "eval-split"));
    task.train_shards = std::move(split.train_shards);
    task.pooled_eval = std::move(split.pooled_eval);
    task.pooled_train = concat(task.train_shards);
    return task;
}

std::string cmd_partition(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    return save_partition(build_shards(cfg), cfg.out_dir);
}

TrainArtifacts cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path dir(cfg.out_dir);

    TrainArtifacts art;
    art.config_file = (dir / "config.txt").string();
    {
        std::ofstream out(art.config_file, std::ios::trunc);
        if (!out) {
            throw IoError("cmd_train: cannot write '" + art.config_file + "'");
        }
        out << serialize_config(cfg);
    }

    FederatedTask task;
    task.model = cfg.model_config();
    std::vector<LabeledDataset> shards = build_shards(cfg);
    art.manifest_file = save_partition(shards, (dir / "shards").string());
    TrainEvalSplit split = split_train_eval(std::move(shards), cfg.data_eval_fraction,
                                            derive_seed(RngSeed{cfg.seed}, "eval-split"));
    task.train_shards = std::move(split.train_shards);
    task.pooled_eval = std::move(split.pooled_eval);
    task.pooled_train = concat(task.train_shards);

    art.run = run_training(task, cfg.run_options());

    art.metrics_csv = (dir / "metrics.csv").string();
    write_metrics_csv(art.run.metrics, art.metrics_csv);
    art.model_file = (dir / "global_model.bin").string();
    ParamSet merged = art.run.global_pairs.empty()
                          ? art.run.global
                          : materialize_merged(art.run.global, art.run.global_pairs);
    save_paramset(merged, art.model_file);
    return art;
}

} // namespace fedsim
