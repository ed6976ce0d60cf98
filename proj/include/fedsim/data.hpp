#pragma once

#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedsim {

enum class DatasetKind { vector, sequence };

struct LabeledDataset {
    DatasetKind kind = DatasetKind::vector;
    std::size_t num_classes = 0;
    std::vector<std::vector<double>> features;       // kind == vector
    std::vector<std::vector<std::int32_t>> tokens;   // kind == sequence
    std::vector<std::int32_t> labels;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    void validate() const;
    std::vector<std::size_t> class_histogram() const;
};

struct PartitionSpec {
    std::size_t num_clients = 1;
    double alpha = 0.1; // Dirichlet concentration; smaller => more skew
    RngSeed seed;
    bool equal_sizes = true;
};

// C Gaussian clusters of unit covariance, centers cluster_sep apart along
// distinct directions, labels assigned round-robin.
LabeledDataset synth_vectors(std::size_t n, std::size_t num_classes, std::size_t dim,
                             double cluster_sep, RngSeed seed);

// Class-specific first-order Markov chains over disjoint token bands; with
// probability in_band_prob the next token stays inside the class band.
// Requires vocab >= 2 * num_classes so every class owns >= 2 tokens.
LabeledDataset synth_sequences(std::size_t n, std::size_t num_classes, std::size_t vocab,
                               std::size_t seq_len, RngSeed seed, double in_band_prob = 0.85);

// Per class, draw shard proportions ~ Dirichlet(alpha * 1_N) and deal that
// class's samples out without replacement; equal_sizes rebalances to +-1 by
// moving surplus samples from the largest shard's most abundant class.
std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& ds,
                                                const PartitionSpec& spec);

struct TrainEvalSplit {
    std::vector<LabeledDataset> train_shards;
    LabeledDataset pooled_eval;
};

// Per-shard split (stratified when every present class has >= 2 samples),
// eval parts concatenated into one pooled set.
TrainEvalSplit split_train_eval(const std::vector<LabeledDataset>& shards, double eval_fraction,
                                RngSeed seed);

// CSV formats: vector datasets use header f0,...,f{dim-1},label; sequence
// datasets use header tokens,label with space-separated token ids.
LabeledDataset load_csv(const std::string& path);
void save_csv(const LabeledDataset& ds, const std::string& path);

// One CSV per shard (shard_000.csv, ...) plus manifest.json with sizes and
// class histograms. Returns the manifest path.
std::string save_partition(const std::vector<LabeledDataset>& shards, const std::string& dir);

LabeledDataset concat(const std::vector<LabeledDataset>& parts);
Batch make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices);
Batch full_batch(const LabeledDataset& ds);

} // namespace fedsim
