#include "droughtcast/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "droughtcast/errors.hpp"
#include "droughtcast/rng.hpp"

namespace droughtcast {

void SynthParams::validate() const {
    if (t_len < 2 || rows < 1 || cols < 1) {
        throw ArgumentError("synthetic cube needs t_len >= 2 and a non-empty grid");
    }
    if (!(std::fabs(ar_coeff) < 1.0)) {
        throw ArgumentError("ar_coeff must lie in (-1, 1)");
    }
    if (!(spatial_sigma >= 0.0) || !(noise_sd > 0.0) || !(value_scale >= 0.0) || !std::isfinite(seasonal_amp)) {
        throw ArgumentError("invalid synthetic field parameters");
    }
}

namespace {

std::vector<double> kernel_1d(double sigma) {
    if (sigma <= 0.0) {
        return {1.0};
    }
    const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * static_cast<std::size_t>(radius) + 1);
    for (int k = -radius; k <= radius; ++k) {
        w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    }
    return w;
}

/// Separable smoothing; weights renormalized over the in-grid part of the kernel.
void smooth(std::vector<double>& field, std::size_t rows, std::size_t cols, const std::vector<double>& w) {
    if (w.size() == 1) {
        return;
    }
    const int radius = static_cast<int>(w.size() / 2);
    std::vector<double> tmp(field.size());
    auto pass = [&](const std::vector<double>& src, std::vector<double>& dst, bool along_cols) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                double acc = 0.0;
                double norm = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const auto rr = static_cast<long>(r) + (along_cols ? 0 : k);
                    const auto cc = static_cast<long>(c) + (along_cols ? k : 0);
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) || cc >= static_cast<long>(cols)) {
                        continue;
                    }
                    const double wk = w[static_cast<std::size_t>(k + radius)];
                    acc += wk * src[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
                    norm += wk;
                }
                dst[r * cols + c] = acc / norm;
            }
        }
    };
    pass(field, tmp, true);
    pass(tmp, field, false);
}

float clamp_value(double v) {
    return static_cast<float>(std::clamp(v, -PdsiCube::kSanityBound, PdsiCube::kSanityBound));
}

} // namespace

PdsiCube generate(const SynthParams& params) {
    params.validate();
    SplitMix64 rng(params.seed);
    const auto kernel = kernel_1d(params.spatial_sigma);
    const std::size_t plane = params.rows * params.cols;
    std::vector<double> latent(plane, 0.0);
    std::vector<double> eps(plane);
    std::vector<float> values(params.t_len * plane);
    const double stationary = 1.0 / std::sqrt(1.0 - params.ar_coeff * params.ar_coeff);

    for (std::size_t t = 0; t < params.t_len; ++t) {
        for (auto& e : eps) {
            e = params.noise_sd * rng.normal();
        }
        smooth(eps, params.rows, params.cols, kernel);
        const double season = params.seasonal_amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0);
        for (std::size_t i = 0; i < plane; ++i) {
            latent[i] = t == 0 ? eps[i] * stationary : params.ar_coeff * latent[i] + eps[i];
            values[t * plane + i] = clamp_value(params.value_scale * latent[i] + season);
        }
    }
    return PdsiCube({params.t_len, params.rows, params.cols}, std::move(values), 0);
}

std::size_t border_band_depth(std::size_t side, double band_frac) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(band_frac * static_cast<double>(side))));
}

PdsiCube add_border_noise(const PdsiCube& cube, double band_frac, double noise_sd, std::uint64_t seed) {
    if (!(band_frac > 0.0 && band_frac < 0.5) || !(noise_sd >= 0.0)) {
        throw ArgumentError("border noise needs band_frac in (0, 0.5) and noise_sd >= 0");
    }
    const auto band_r = border_band_depth(cube.rows(), band_frac);
    const auto band_c = border_band_depth(cube.cols(), band_frac);
    SplitMix64 rng(seed);
    PdsiCube out = cube;
    for (std::size_t t = 0; t < cube.t_len(); ++t) {
        for (std::size_t r = 0; r < cube.rows(); ++r) {
            for (std::size_t c = 0; c < cube.cols(); ++c) {
                const bool border = r < band_r || c < band_c || r >= cube.rows() - band_r || c >= cube.cols() - band_c;
                if (!border || !cube.valid(t, r, c)) {
                    continue;
                }
                out.set(t, r, c, clamp_value(cube.value(t, r, c) + noise_sd * rng.normal()));
            }
        }
    }
    return out;
}

} // namespace droughtcast
