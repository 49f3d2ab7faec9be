#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "rlpipe/model.hpp"

namespace rlpipe::model {

struct FdReport {
    size_t checked = 0;
    double max_rel_err = 0.0;
    size_t worst_index = 0;
};

// Central finite differences of an arbitrary scalar loss against a supplied
// analytic gradient. Perturbs every coordinate by +-h (restoring the model),
// so keep the model tiny. Meant for high-precision models.
FdReport finite_diff_compare(ModelState& model,
                             const std::function<double(const ModelState&)>& loss,
                             std::span<const double> analytic, double h,
                             double rel_floor = 1e-6);

struct GradCheckSummary {
    int seeds = 0;
    size_t coords_checked = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Token-level cross-entropy gradients on random tiny models vs central
// finite differences (h = 1e-4, high precision), one model per seed.
GradCheckSummary run_gradcheck(int seeds, double tolerance = 1e-3);

} // namespace rlpipe::model
