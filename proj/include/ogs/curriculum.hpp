#pragma once

#include <cstdint>

#include "ogs/rng.hpp"
#include "ogs/scene.hpp"

namespace ogs {

enum class ScheduleInterpretation { odds, clamp };

// Progressive augmentation schedule. The weight is the unnormalized Beta
// kernel, base + amplitude * t^(alpha-1) * (1-t)^(beta-1); with the
// defaults it peaks at t = 1/4. `interpretation` maps the weight to a
// probability: odds -> w/(1+w), clamp -> min(1, w).
struct ScheduleParams {
    double base = 0.1;
    double amplitude = 20.0;
    double alpha = 2.0;
    double beta = 4.0;
    ScheduleInterpretation interpretation = ScheduleInterpretation::odds;
    uint64_t seed = 1;

    void validate() const;
};

// w(t); throws when t is outside [0, 1].
double schedule_weight(double t, const ScheduleParams& params);

// Probability of sampling a synthetic view at progress t.
double sample_probability(double t, const ScheduleParams& params);

// Bernoulli(sample_probability(t)) on one rng draw. Degrades to the
// available role when the drawn one has no views; throws when neither
// role has any.
ViewRole sample_source(double t, const ScheduleParams& params, CounterRng& rng,
                       bool has_ground_truth, bool has_synthetic);

} // namespace ogs
