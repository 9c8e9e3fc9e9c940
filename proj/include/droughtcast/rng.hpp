#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace droughtcast {

/**
 * Counter-based SplitMix64 stream.
 *
 * Draw k (k = 0, 1, ...) is mix(seed + (k + 1) * 0x9E3779B97F4A7C15) where mix is the
 * SplitMix64 finalizer:
 *   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
 *   z ^= z >> 27; z *= 0x94D049BB133111EB;
 *   z ^= z >> 31;
 * Uniforms take the top 53 bits. Normals use the cosine branch of Box-Muller and consume
 * exactly two draws: u1 = (draw_a >> 11 + 1) * 2^-53 in (0, 1], u2 = (draw_b >> 11) * 2^-53.
 */
class SplitMix64 {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kMul1 = 0xBF58476D1CE4E5B9ULL;
    static constexpr std::uint64_t kMul2 = 0x94D049BB133111EBULL;

    explicit SplitMix64(std::uint64_t seed) : seed_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= kMul1;
        z ^= z >> 27;
        z *= kMul2;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t next() {
        ++counter_;
        return mix(seed_ + counter_ * kGamma);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n). Plain modulo; bias is irrelevant for shuffling small ranges.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    std::uint64_t draws() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

} // namespace droughtcast
