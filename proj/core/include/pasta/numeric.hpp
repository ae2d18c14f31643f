// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

namespace pasta {

/// Rounds half away from zero at `decimals` places.
inline double round_half_away(double value, int decimals) {
    const double scale = std::pow(10.0, decimals);
    return std::round(value * scale) / scale;
}

/// Fixed-point text of round_half_away(value, decimals).
std::string format_fixed(double value, int decimals);

}  // namespace pasta
