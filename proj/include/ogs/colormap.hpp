#pragma once

#include "ogs/tensor.hpp"

namespace ogs {

// Viridis-style map: 0 -> dark purple, 1 -> yellow. Confidence maps render
// with yellow = confident, purple = uncertain.
Image colorize(const Plane& values);

} // namespace ogs
