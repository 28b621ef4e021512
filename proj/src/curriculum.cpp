#include "ogs/curriculum.hpp"

#include <cmath>
#include <stdexcept>

namespace ogs {

void ScheduleParams::validate() const {
    if (!(base >= 0)) throw std::runtime_error("schedule: base must be >= 0");
    if (!(amplitude >= 0))
        throw std::runtime_error("schedule: amplitude must be >= 0");
    if (!(alpha > 0) || !(beta > 0))
        throw std::runtime_error("schedule: alpha and beta must be > 0");
}

double schedule_weight(double t, const ScheduleParams& params) {
    params.validate();
    if (!(t >= 0.0 && t <= 1.0))
        throw std::runtime_error("schedule_weight: t must lie in [0,1]");
    return params.base + params.amplitude * std::pow(t, params.alpha - 1.0) *
                             std::pow(1.0 - t, params.beta - 1.0);
}

double sample_probability(double t, const ScheduleParams& params) {
    double w = schedule_weight(t, params);
    if (params.interpretation == ScheduleInterpretation::odds)
        return w / (1.0 + w);
    return std::min(1.0, w);
}

ViewRole sample_source(double t, const ScheduleParams& params, CounterRng& rng,
                       bool has_ground_truth, bool has_synthetic) {
    if (!has_ground_truth && !has_synthetic)
        throw std::runtime_error("sample_source: empty view set");
    double p = sample_probability(t, params);
    bool synthetic = rng.uniform() < p;
    if (synthetic && !has_synthetic) return ViewRole::ground_truth;
    if (!synthetic && !has_ground_truth) return ViewRole::synthetic;
    return synthetic ? ViewRole::synthetic : ViewRole::ground_truth;
}

} // namespace ogs
