#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "droughtcast/labeler.hpp"
#include "droughtcast/pdsi_cube.hpp"

namespace droughtcast {

/// History window, lead time and square neighborhood used to turn cells into samples.
struct WindowSpec {
    std::size_t history_len = 1;
    std::size_t horizon = 1;
    std::size_t neighborhood = 3;

    void validate() const;
    std::size_t width() const { return history_len * neighborhood * neighborhood; }
    /// First target month that has a full history.
    std::size_t first_target() const { return history_len + horizon - 1; }
};

struct SampleOrigin {
    std::size_t t = 0;
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const SampleOrigin&) const = default;
};

/// Row-major feature matrix with one sample per (target month, row, col).
struct DesignMatrix {
    std::size_t width = 0;
    std::vector<double> features;
    std::vector<int> targets;
    std::vector<SampleOrigin> origins;
    std::size_t n_classes = 2;

    std::size_t size() const { return origins.size(); }
    const double* row(std::size_t i) const { return features.data() + i * width; }
    double at(std::size_t i, std::size_t j) const { return features[i * width + j]; }
};

/**
 * Samples for every cell and every target month t >= history_len + horizon - 1 whose label
 * is valid. Feature j*k^2 + dy*k + dx holds the value at month t - horizon - (history_len-1) + j
 * of neighbor (row + dy - k/2, col + dx - k/2); out-of-grid or missing neighbors give 0.
 * Samples are ordered by (t, row, col). Throws ArgumentError when the cube is too short.
 */
DesignMatrix build_design(const PdsiCube& cube, const LabelCube& labels, const WindowSpec& spec);

/// Same features for every target month and cell regardless of labels; targets are -1.
DesignMatrix build_features(const PdsiCube& cube, const WindowSpec& spec);

/// Per-feature z-scoring fitted on training samples.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;

    static Standardizer fit(const DesignMatrix& design);
    void apply(DesignMatrix& design) const;
    void apply_row(const double* in, double* out) const;
    bool empty() const { return mean.empty(); }
};

/// CSV export: header `t,row,col,y,f0..fN`.
void write_design_csv(const DesignMatrix& design, const std::filesystem::path& path);

} // namespace droughtcast
