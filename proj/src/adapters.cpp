#include "fedsim/adapters.hpp"

#include "fedsim/error.hpp"
#include "fedsim/linalg.hpp"

namespace fedsim {

std::vector<LoraPair> attach_lora(ParamSet& params, const std::vector<std::string>& targets,
                                  std::size_t rank, double scale, double init_std, bool frozen_a,
                                  RngSeed seed) {
    if (rank < 1) {
        throw ContractError("attach_lora: rank must be >= 1");
    }
    if (scale <= 0.0) {
        throw ContractError("attach_lora: scale must be positive");
    }
    std::vector<LoraPair> pairs;
    for (const auto& target : targets) {
        if (!params.has(target)) {
            throw ContractError("attach_lora: unknown target '" + target + "'");
        }
        Param& base = params.at(target);
        const std::size_t d = base.value.rows();
        const std::size_t k = base.value.cols();
        if (rank > std::min(d, k)) {
            throw ContractError("attach_lora: rank " + std::to_string(rank) +
                                " exceeds min(d,k) for '" + target + "'");
        }
        base.trainable = false;
        LoraPair pair;
        pair.target_name = target;
        pair.rank = rank;
        pair.scale = scale;
        pair.frozen_a = frozen_a;
        pair.b = Matrix(d, rank);
        pair.a = gaussian_init(rank, k, init_std, derive_seed(seed, target));
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

Matrix effective_update(const LoraPair& pair) {
    Matrix update = matmul(pair.b, pair.a);
    update *= pair.scale;
    return update;
}

Matrix merge_lora(const Matrix& base, const LoraPair& pair) {
    if (base.rows() != pair.b.rows() || base.cols() != pair.a.cols()) {
        throw ContractError("merge_lora: base shape does not match pair '" + pair.target_name +
                            "'");
    }
    Matrix merged = base;
    merged += effective_update(pair);
    return merged;
}

LoraGrads lora_backward_map(const Matrix& grad_w, const LoraPair& pair) {
    if (grad_w.rows() != pair.b.rows() || grad_w.cols() != pair.a.cols()) {
        throw ContractError("lora_backward_map: grad shape does not match pair '" +
                            pair.target_name + "'");
    }
    LoraGrads grads;
    grads.b = matmul(grad_w, transpose(pair.a));
    grads.b *= pair.scale;
    if (!pair.frozen_a) {
        Matrix ga = matmul(transpose(pair.b), grad_w);
        ga *= pair.scale;
        grads.a = std::move(ga);
    }
    return grads;
}

ParamSet materialize_merged(const ParamSet& base, const std::vector<LoraPair>& pairs) {
    ParamSet merged = base;
    for (auto& p : merged) {
        p.trainable = false;
    }
    for (const auto& pair : pairs) {
        Param& target = merged.at(pair.target_name);
        target.value = merge_lora(base.at(pair.target_name).value, pair);
        target.trainable = true;
    }
    return merged;
}

} // namespace fedsim
