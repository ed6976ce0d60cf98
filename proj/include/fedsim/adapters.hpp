#pragma once

#include "fedsim/matrix.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fedsim {

// Low-rank adapter pair for one target matrix: effective update
// scale * B * A with B (d x r) zero-initialized and A (r x k) Gaussian.
struct LoraPair {
    std::string target_name;
    Matrix a; // r x k
    Matrix b; // d x r
    std::size_t rank = 0;
    double scale = 1.0;
    bool frozen_a = false;
};

// Attach pairs to the named targets: bases become non-trainable, B = 0,
// A ~ N(0, init_std^2) derived deterministically from seed per target.
std::vector<LoraPair> attach_lora(ParamSet& params, const std::vector<std::string>& targets,
                                  std::size_t rank, double scale, double init_std, bool frozen_a,
                                  RngSeed seed);

// scale * B * A, shape d x k.
Matrix effective_update(const LoraPair& pair);

// base + effective_update(pair); base untouched.
Matrix merge_lora(const Matrix& base, const LoraPair& pair);

struct LoraGrads {
    Matrix b;
    std::optional<Matrix> a; // absent when frozen_a
};

// Chain rule through W = W0 + scale * B * A:
// grad_B = scale * grad_W * A^T, grad_A = scale * B^T * grad_W.
LoraGrads lora_backward_map(const Matrix& grad_w, const LoraPair& pair);

// Copy of `base` with every pair's update merged into its target and the
// targets marked trainable, so backward() yields grad_W for the mapping.
ParamSet materialize_merged(const ParamSet& base, const std::vector<LoraPair>& pairs);

} // namespace fedsim
