#ifndef PANELSYNTH_PRNG_HPP
#define PANELSYNTH_PRNG_HPP

#include <cmath>
#include <cstdint>

namespace panelsynth {

/// SplitMix64. Fully specified 64-bit shift/multiply generator so that seeded
/// outputs are stable across builds and platforms.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes two uniforms per pair.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        while (u1 <= 0.0) u1 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Poisson draw. Knuth's product method below lambda 30, otherwise
    /// normal approximation rounded and clamped at zero (demo-data quality).
    long long next_poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        if (lambda < 30.0) {
            double limit = std::exp(-lambda);
            double prod = next_uniform();
            long long k = 0;
            while (prod > limit) {
                prod *= next_uniform();
                ++k;
            }
            return k;
        }
        double draw = lambda + std::sqrt(lambda) * next_normal();
        return draw < 0.0 ? 0 : static_cast<long long>(draw + 0.5);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace panelsynth

#endif
