#include "ogs/colormap.hpp"

#include <algorithm>
#include <cmath>

namespace ogs {

namespace {

// Control points sampled from the viridis palette.
constexpr double kStops[9][3] = {
    {0.267004, 0.004874, 0.329415}, {0.282623, 0.140926, 0.457517},
    {0.253935, 0.265254, 0.529983}, {0.206756, 0.371758, 0.553117},
    {0.163625, 0.471133, 0.558148}, {0.127568, 0.566949, 0.550556},
    {0.134692, 0.658636, 0.517649}, {0.477504, 0.821444, 0.318195},
    {0.993248, 0.906157, 0.143936}};

} // namespace

Image colorize(const Plane& values) {
    Image out(values.height, values.width, 3);
    for (int y = 0; y < values.height; ++y)
        for (int x = 0; x < values.width; ++x) {
            double v = std::clamp(values.at(y, x), 0.0, 1.0) * 8.0;
            int k = std::min(static_cast<int>(v), 7);
            double f = v - k;
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) =
                    (1.0 - f) * kStops[k][c] + f * kStops[k + 1][c];
        }
    return out;
}

} // namespace ogs
