#pragma once

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedsim {

enum class ModelFamily { convex, transformer };

// Dimensions and regularization for one model family.
// convex: C x feature_dim multinomial linear classifier, strongly convex via
// l2_lambda > 0. transformer: embedding -> single-head self-attention ->
// project-up MLP -> project-down -> mean pool -> classifier.
struct ModelConfig {
    ModelFamily family = ModelFamily::convex;
    std::size_t num_classes = 2;
    std::size_t feature_dim = 2; // convex only
    std::size_t vocab = 8;       // transformer only
    std::size_t hidden = 4;
    std::size_t mlp_mult = 4;
    std::size_t seq_len = 4;
    double l2_lambda = 1e-3; // convex only; > 0 pins a unique optimum

    void validate() const;
};

struct Param {
    std::string name;
    Matrix value;
    bool trainable = true;
};

// Ordered, uniquely named weight matrices with trainability flags.
class ParamSet {
  public:
    void add(std::string name, Matrix value, bool trainable = true);
    bool has(std::string_view name) const;
    Param& at(std::string_view name);
    const Param& at(std::string_view name) const;

    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::vector<std::string> trainable_names() const;

  private:
    std::vector<Param> params_;
};

// Mini-batch: exactly one of features/tokens is populated, matching the
// model family; labels are class indices in [0, C).
struct Batch {
    std::vector<std::vector<double>> features;
    std::vector<std::vector<std::int32_t>> tokens;
    std::vector<std::int32_t> labels;

    std::size_t size() const { return labels.size(); }
};

// Gradients for the trainable subset of a ParamSet, same names and shapes.
class GradSet {
  public:
    void add(std::string name, Matrix grad);
    bool has(std::string_view name) const;
    Matrix& at(std::string_view name);
    const Matrix& at(std::string_view name) const;

    std::size_t size() const { return grads_.size(); }
    auto begin() { return grads_.begin(); }
    auto end() { return grads_.end(); }
    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

  private:
    std::vector<std::pair<std::string, Matrix>> grads_;
};

// Activations captured by forward() for the matching backward() call.
// fingerprint ties the cache to the exact (params, batch) pair.
struct ForwardCache {
    std::uint64_t fingerprint = 0;
    // convex
    Matrix probs; // batch x C softmax rows
    // transformer, one entry per sequence
    struct SeqCache {
        Matrix x;        // seq x h token embeddings
        Matrix q, k, v;  // seq x h
        Matrix attn;     // seq x seq softmax rows
        Matrix z;        // seq x h attention output
        Matrix o;        // seq x h after Wo
        Matrix up_act;   // seq x mh tanh(o * Wup)
        Matrix down;     // seq x h
        std::vector<double> pooled; // h
        std::vector<double> prob;   // C
    };
    std::vector<SeqCache> seqs;
};

enum class SelectionScheme { all, attention_qkv, project_up, classifier_and_project_up };

SelectionScheme parse_selection_scheme(std::string_view name);
std::string to_string(SelectionScheme scheme);

// Zero-initialized parameters with the family's fixed names/shapes
// (convex: W; transformer: Emb, Wq, Wk, Wv, Wo, Wup, Wdown, Wcls).
ParamSet make_params(const ModelConfig& cfg);
// Gaussian-initialized variant; stddev 0 keeps the zero init.
ParamSet make_params(const ModelConfig& cfg, double init_std, RngSeed seed);

// Returns params with trainable flags set exactly on the scheme's targets.
ParamSet select_trainable(ParamSet params, const ModelConfig& cfg, SelectionScheme scheme);
// The parameter names a scheme marks trainable.
std::vector<std::string> scheme_targets(const ModelConfig& cfg, SelectionScheme scheme);

std::pair<double, ForwardCache> forward(const ParamSet& params, const ModelConfig& cfg,
                                        const Batch& batch);
double loss_only(const ParamSet& params, const ModelConfig& cfg, const Batch& batch);
GradSet backward(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                 const ForwardCache& cache);
// Central differences (L(w+h) - L(w-h)) / 2h per trainable scalar; h in [1e-7, 1e-3].
GradSet finite_diff_grad(const ParamSet& params, const ModelConfig& cfg, const Batch& batch,
                         double h);
std::vector<std::int32_t> predict(const ParamSet& params, const ModelConfig& cfg,
                                  const Batch& batch);

} // namespace fedsim
