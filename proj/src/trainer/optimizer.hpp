#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "autodiff/tensor.hpp"

namespace morphsdf {

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// First/second moment buffers for one parameter, zero-initialized on first use.
struct AdamSlot {
    ad::Tensor m, v;
};

struct AdamState {
    AdamConfig cfg;
    std::unordered_map<std::string, AdamSlot> slots;  // keyed by parameter name
    int64_t step = 0;     // applied updates; drives bias correction
    int64_t skipped = 0;  // whole steps rejected for non-finite gradients
};

// One named parameter's pending update. The learning rate rides along so
// network weights and latent codes can differ within a single step.
struct ParamUpdate {
    std::string name;
    ad::Tensor* param = nullptr;
    ad::Tensor grad;
    float lr = 0.f;
};

// Applies one Adam step across all updates, or none of them: any non-finite
// gradient entry anywhere skips the whole step (state.skipped counts those).
// p -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments. Slots
// absent from `updates` are untouched (sparse semantics for latent tables).
// Returns whether the step was applied.
bool adam_step(std::vector<ParamUpdate>& updates, AdamState& state);

}  // namespace morphsdf
