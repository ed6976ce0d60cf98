#pragma once

#include "fedsim/federation.hpp"

#include <string>
#include <vector>

namespace fedsim {

// Full experiment description, serialized as flat `key = value` text with
// dotted keys. CLI --set overrides win over file values.
struct ExperimentConfig {
    // model
    std::string model_family = "convex"; // convex | transformer
    std::size_t model_classes = 4;
    std::size_t model_feature_dim = 8;
    std::size_t model_vocab = 32;
    std::size_t model_hidden = 16;
    std::size_t model_mlp_mult = 4;
    std::size_t model_seq_len = 8;
    double model_l2_lambda = 1e-3;
    double model_init_std = 0.05;
    // data
    std::string data_source = "synthetic"; // synthetic | csv
    std::string data_csv;                  // csv source path
    std::size_t data_n = 2000;
    double data_cluster_sep = 4.0;
    double data_in_band_prob = 1.0;
    std::size_t data_num_clients = 4;
    double data_dirichlet_alpha = 0.1;
    bool data_equal_sizes = true;
    double data_eval_fraction = 0.05;
    // method
    std::string method = "direct_sgd"; // fedftg|direct_adam|direct_sgd|fedit|flexlora|ffalora
    std::string selection_scheme = "auto";
    std::string weighting = "uniform"; // uniform | by_train_size
    // adapters
    std::size_t adapter_rank = 8;
    double adapter_alpha = 16.0;
    bool adapter_scale_by_rank = true; // scale = alpha / rank when set, else raw alpha
    double adapter_std = 0.02;
    std::size_t flexlora_rank = 0; // 0 = adapter rank
    bool flexlora_sqrt_split = false;
    // optimizer
    std::string optimizer_kind = "adam"; // sgd | adam (fedftg wraps this in galore)
    double optimizer_lr = 0.01;
    double optimizer_beta1 = 0.9;
    double optimizer_beta2 = 0.999;
    double optimizer_eps = 1e-8;
    std::size_t galore_rank = 4;
    int galore_period = 50;
    double galore_scale = 1.0;
    bool galore_reset_moments = false;
    bool galore_refresh_on_broadcast = true;
    // schedule
    int schedule_epochs = 3;
    int schedule_t_agg = 10;
    int schedule_batch_size = 4;
    int schedule_steps_per_epoch = 0; // 0 = derive from the smallest shard
    // run
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";

    void validate() const;
    ModelConfig model_config() const;
    SelectionScheme resolved_selection() const;
    RunOptions run_options() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key_value);
// Canonical form: sorted keys, shortest round-trip value formatting.
std::string serialize_config(const ExperimentConfig& cfg);

struct TrainArtifacts {
    std::string metrics_csv;
    std::string model_file;
    std::string config_file;
    std::string manifest_file;
    RunResult run;
};

// partition subcommand: shard CSVs + manifest into cfg.out_dir.
std::string cmd_partition(const ExperimentConfig& cfg);
// train subcommand: resolved config, manifest, metrics.csv, model file.
TrainArtifacts cmd_train(const ExperimentConfig& cfg);

// Builds the in-memory task exactly as cmd_train does (shared by tests).
FederatedTask build_task(const ExperimentConfig& cfg);

} // namespace fedsim
