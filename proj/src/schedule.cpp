#include "rlpipe/schedule.hpp"

#include <cmath>

#include "rlpipe/errors.hpp"

namespace rlpipe {

int64_t LrSchedule::warmup_steps() const {
    return static_cast<int64_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at(const LrSchedule& sched, int64_t step) {
    if (step < 0 || step > sched.total_steps) {
        raise(ErrorClass::config, "schedule step out of range");
    }
    const int64_t warmup = sched.warmup_steps();
    if (step < warmup) {
        return sched.lr_max * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (sched.total_steps == warmup) {
        return step == warmup ? sched.lr_max : sched.lr_min;
    }
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(sched.total_steps - warmup);
    if (progress >= 1.0) {
        return sched.lr_min;
    }
    const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    return sched.lr_min + (sched.lr_max - sched.lr_min) * cosine;
}

} // namespace rlpipe
