#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rlpipe/model.hpp"

namespace rlpipe::model {

// AdamW with decoupled weight decay. Moments live in the model's precision;
// the update math runs in that precision too.
struct OptimizerState {
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.0;
    double eps = 1e-8;

    std::vector<float> m32, v32;
    std::vector<double> m64, v64;

    static OptimizerState init(const ModelState& model, double beta1, double beta2,
                               double weight_decay);
};

// One update. Throws a numeric error (leaving model and optimizer untouched)
// if any gradient is non-finite.
void adamw_step(ModelState& model, OptimizerState& opt, std::span<const double> grads,
                double lr);

double global_grad_norm(std::span<const double> grads);

// Scales grads in place so the global norm is at most max_norm.
void clip_grad_norm(std::vector<double>& grads, double max_norm);

} // namespace rlpipe::model
