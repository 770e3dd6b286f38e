#ifndef PANELSYNTH_STATS_HPP
#define PANELSYNTH_STATS_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "panelsynth/common.hpp"

namespace panelsynth {
namespace stats {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

/// sqrt(mean of squares); used for pre/post fit RMSEs throughout.
inline double rms(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x * x;
    return std::sqrt(s / static_cast<double>(xs.size()));
}

/// Empirical percentile with linear interpolation between closest order
/// statistics (the common "type 7" estimator). pct in [0, 100].
inline double percentile(std::vector<double> xs, double pct) {
    if (xs.empty()) throw Error("percentile of empty sample");
    if (pct < 0.0 || pct > 100.0) throw Error("percentile must be in [0,100]");
    std::sort(xs.begin(), xs.end());
    if (xs.size() == 1) return xs[0];
    double h = (static_cast<double>(xs.size()) - 1.0) * pct / 100.0;
    auto lo = static_cast<std::size_t>(std::floor(h));
    auto hi = static_cast<std::size_t>(std::ceil(h));
    if (lo == hi) return xs[lo];
    double frac = h - static_cast<double>(lo);
    return xs[lo] + frac * (xs[hi] - xs[lo]);
}

inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

/// Kolmogorov-Smirnov distance between a sample and Uniform[0,1].
inline double ks_distance_uniform(std::vector<double> xs) {
    if (xs.empty()) throw Error("KS distance of empty sample");
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double u = std::clamp(xs[i], 0.0, 1.0);
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - u));
        d = std::max(d, std::abs(u - static_cast<double>(i) / n));
    }
    return d;
}

inline double correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) return 0.0;
    double ma = mean(a), mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

} // namespace stats
} // namespace panelsynth

#endif
