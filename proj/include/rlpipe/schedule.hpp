#pragma once

#include <cstdint>

namespace rlpipe {

// Cosine learning-rate schedule with an optional linear warm-up ramp.
// lr(0..warmup) ramps 0 -> lr_max, then cosine-decays to exactly lr_min
// at total_steps.
struct LrSchedule {
    double lr_max = 0.0;
    double lr_min = 0.0;
    int64_t total_steps = 0;
    double warmup_ratio = 0.0;

    int64_t warmup_steps() const;
};

double lr_at(const LrSchedule& sched, int64_t step);

} // namespace rlpipe
