#pragma once

#include <cmath>
#include <cstdint>

namespace fw {

// SplitMix64. Fixed constants so generated byte streams reproduce across
// platforms and languages; all randomness in the project flows through this.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    // Standard normal via Box-Muller (std::normal_distribution is
    // implementation-defined, so it is avoided on purpose).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool coin() { return (next() & 1ULL) != 0ULL; }

private:
    std::uint64_t state_;
};

// Stateless substream derivation: mixes a base seed with stream tags so
// independent consumers (per-sample, per-step, per-purpose) never share state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    SplitMix64 g(seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
    return g.next();
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
    return mix_seed(mix_seed(seed, tag_a), tag_b);
}

}  // namespace fw
