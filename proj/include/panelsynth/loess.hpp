#ifndef PANELSYNTH_LOESS_HPP
#define PANELSYNTH_LOESS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "panelsynth/common.hpp"

namespace panelsynth {

/// Locally weighted linear regression over equally spaced points: tricube
/// weights over the ceil(span * n) nearest neighbors of each point, degree 1,
/// no robustness iterations. Display smoothing only; statistics are always
/// computed on the raw series.
inline std::vector<double> loess_smooth(std::span<const double> y, double span = 0.07) {
    const int n = static_cast<int>(y.size());
    if (span <= 0.0 || span > 1.0) throw Error("loess span must lie in (0, 1]");
    int k = static_cast<int>(std::ceil(span * n));
    if (n < std::max(4, k)) throw Error("series too short for loess at this span");
    k = std::clamp(k, 3, n);

    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // Nearest k indices of an equally spaced grid form a window around i.
        int lo = std::clamp(i - (k - 1) / 2, 0, n - k);
        int hi = lo + k - 1;
        double dmax = static_cast<double>(std::max(i - lo, hi - i));
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
        for (int j = lo; j <= hi; ++j) {
            double dx = static_cast<double>(j - i);
            double u = std::abs(dx) / dmax;
            if (u >= 1.0) continue; // boundary neighbor gets zero weight
            double c = 1.0 - u * u * u;
            double w = c * c * c;
            s0 += w;
            s1 += w * dx;
            s2 += w * dx * dx;
            t0 += w * y[static_cast<std::size_t>(j)];
            t1 += w * dx * y[static_cast<std::size_t>(j)];
        }
        double denom = s0 * s2 - s1 * s1;
        if (std::abs(denom) > 1e-12 * std::max(1.0, s0 * s2))
            out[static_cast<std::size_t>(i)] = (s2 * t0 - s1 * t1) / denom;
        else
            out[static_cast<std::size_t>(i)] = s0 > 0.0 ? t0 / s0 : y[static_cast<std::size_t>(i)];
    }
    return out;
}

} // namespace panelsynth

#endif
