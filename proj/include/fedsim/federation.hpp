#pragma once

#include "fedsim/adapters.hpp"
#include "fedsim/data.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fedsim {

enum class AggregationKind { direct, fedit, flexlora, ffalora };
enum class Weighting { uniform, by_train_size };

AggregationKind parse_aggregation_kind(std::string_view name);
std::string to_string(AggregationKind kind);

struct AggregationStrategy {
    AggregationKind kind = AggregationKind::direct;
    Weighting weighting = Weighting::uniform;
    std::size_t flexlora_rank = 0; // 0 = adapter rank
    bool flexlora_sqrt_split = false;
};

// epochs and the local-step schedule; one aggregation every t_agg steps plus
// a forced aggregation at each epoch end when T is not a multiple of t_agg.
struct RoundSchedule {
    int epochs = 1;
    int t_agg = 1;
    int batch_size = 1;
    int steps_per_epoch = 0; // 0 = floor(min shard size / batch_size)
    RngSeed seed;
};

enum class OptimizerKind { sgd, adam, galore_sgd, galore_adam };

struct ClientState {
    int id = 0;
    const LabeledDataset* shard = nullptr;
    ParamSet params;
    std::vector<LoraPair> pairs;
    std::optional<AdamState> adam;
    std::optional<GaloreState> galore;
    double lr = 0.0;

    std::size_t train_size() const { return shard ? shard->size() : 0; }
};

struct FederatedTask {
    ModelConfig model;
    std::vector<LabeledDataset> train_shards;
    LabeledDataset pooled_eval;
    LabeledDataset pooled_train;
};

struct RunOptions {
    AggregationStrategy strategy;
    SelectionScheme selection = SelectionScheme::all;
    // adapters (fedit / flexlora / ffalora)
    bool use_adapters = false;
    std::size_t adapter_rank = 8;
    double adapter_scale = 2.0; // alpha_lora / r by default convention
    double adapter_std = 0.02;
    bool frozen_a = false;
    // local optimizer
    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr = 0.01;
    AdamConfig adam;
    std::size_t galore_rank = 4;
    std::int64_t galore_period = 50;
    double galore_scale = 1.0;
    bool galore_reset_on_refresh = false;
    bool galore_refresh_after_broadcast = true;
    // run shape
    RoundSchedule schedule;
    double init_std = 0.0; // 0 keeps zero-initialized weights
    bool compute_excess_risk = true;
    std::vector<int> exec_order; // client execution permutation (tests); empty = identity
};

// Test hook: observe raw full-weight gradients and aggregation snapshots.
class StepObserver {
  public:
    virtual ~StepObserver() = default;
    // grads are w.r.t. the (merged) weight matrices the model saw this step
    virtual void on_local_step(int client_id, int epoch, int round, int local_step,
                               const GradSet& weight_grads, const ClientState& client) {
        (void)client_id;
        (void)epoch;
        (void)round;
        (void)local_step;
        (void)weight_grads;
        (void)client;
    }
    virtual void on_aggregation(int round, const ParamSet& global,
                                const std::vector<LoraPair>& global_pairs,
                                const std::vector<ClientState>& clients) {
        (void)round;
        (void)global;
        (void)global_pairs;
        (void)clients;
    }
};

struct RunResult {
    std::vector<MetricsRecord> metrics;
    ParamSet global;                   // final base parameters
    std::vector<LoraPair> global_pairs; // final adapter state (adapter runs)
    int total_rounds = 0;
    int steps_per_epoch = 0;
    std::string trace_param; // matrix whose rank/norm/entropy is logged
    double w0_spectral_norm = 0.0;
    std::optional<ParamSet> w_star;
};

// Weighted mean of every trainable matrix over clients in canonical id order;
// non-trainable matrices are copied from client 0.
ParamSet aggregate_direct(const std::vector<ClientState>& clients, Weighting weighting);

// Entrywise mean of B's and of A's independently, per target.
std::vector<LoraPair> aggregate_fedit(const std::vector<ClientState>& clients);

struct FlexloraResult {
    std::vector<LoraPair> pairs;            // redistributed factors
    std::vector<Matrix> merged_updates;     // weighted mean of scale*B_i*A_i per target
    std::vector<double> tail_mass;          // discarded tail mass per target
};
FlexloraResult aggregate_flexlora(const std::vector<ClientState>& clients, Weighting weighting,
                                  std::size_t r_target, bool sqrt_split);

// Mean of B per target; A must be bitwise identical across clients.
std::vector<LoraPair> aggregate_ffalora(const std::vector<ClientState>& clients,
                                        Weighting weighting);

// Replace every client's trainable matrices with the global values.
void broadcast(const ParamSet& global, std::vector<ClientState>& clients);
// Adapter counterpart; b_only leaves client A matrices untouched (FFA).
void broadcast_pairs(const std::vector<LoraPair>& global_pairs, std::vector<ClientState>& clients,
                     bool b_only);

RunResult run_training(const FederatedTask& task, const RunOptions& options,
                       StepObserver* observer = nullptr);

} // namespace fedsim
