#pragma once

#include <cstdint>

#include "droughtcast/pdsi_cube.hpp"

namespace droughtcast {

/// Parameters of the synthetic AR(1) + seasonal PDSI-like field.
struct SynthParams {
    std::size_t t_len = 600;
    std::size_t rows = 16;
    std::size_t cols = 16;
    double ar_coeff = 0.95;
    double spatial_sigma = 1.5;
    double seasonal_amp = 0.5;
    double noise_sd = 1.0;
    double value_scale = 3.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/**
 * z_t = ar_coeff * z_{t-1} + smooth(eps_t), eps ~ N(0, noise_sd^2) per cell, smoothing by a
 * Gaussian kernel truncated at 3 * spatial_sigma and renormalized over in-grid cells.
 * z_0 = smooth(eps_0) / sqrt(1 - ar_coeff^2), i.e. drawn from the stationary law.
 * value = value_scale * z_t + seasonal_amp * sin(2 pi t / 12), clamped to the cube's sanity
 * bound. Noise is drawn month by month in row-major cell order from one SplitMix64 stream.
 */
PdsiCube generate(const SynthParams& params);

/**
 * Adds N(0, noise_sd^2) to every entry in the outer border band of the grid. The band is
 * max(1, round(band_frac * side)) cells deep on each side.
 */
PdsiCube add_border_noise(const PdsiCube& cube, double band_frac, double noise_sd, std::uint64_t seed);

/// Depth in cells of the border band used by add_border_noise.
std::size_t border_band_depth(std::size_t side, double band_frac);

} // namespace droughtcast
