#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "droughtcast/pdsi_cube.hpp"

namespace droughtcast {

/**
 * Ordered PDSI cut points. A value's class is the number of thresholds strictly below it,
 * so class 0 is the driest. The binary scheme is the single cut {-2}; binarize() flips it
 * so that 1 means drought.
 */
class ClassScheme {
public:
    static constexpr double kDroughtThreshold = -2.0;

    /// Throws ArgumentError unless thresholds are finite, non-empty and strictly increasing.
    explicit ClassScheme(std::vector<double> thresholds);

    static ClassScheme binary(double threshold = kDroughtThreshold) { return ClassScheme({threshold}); }
    static ClassScheme three_class() { return ClassScheme({-1.0, 1.0}); }
    static ClassScheme five_class() { return ClassScheme({-3.0, -1.0, 1.0, 3.0}); }

    const std::vector<double>& thresholds() const { return thresholds_; }
    std::size_t n_classes() const { return thresholds_.size() + 1; }
    bool is_binary() const { return thresholds_.size() == 1; }

    /// Interval index: count of thresholds strictly below `value`.
    int interval(double value) const;
    /// Label as used by training and metrics: drought=1 for binary, interval otherwise.
    int label(double value) const;

    bool operator==(const ClassScheme&) const = default;

private:
    std::vector<double> thresholds_;
};

/// Per-entry class labels sharing the source cube's dims and mask. Missing labels are -1.
class LabelCube {
public:
    static constexpr std::int8_t kMissing = -1;

    LabelCube() = default;
    LabelCube(CubeDims dims, std::size_t n_classes);

    const CubeDims& dims() const { return dims_; }
    std::size_t n_classes() const { return n_classes_; }

    std::size_t index(std::size_t t, std::size_t r, std::size_t c) const {
        return (t * dims_.rows + r) * dims_.cols + c;
    }
    int label(std::size_t t, std::size_t r, std::size_t c) const { return labels_[index(t, r, c)]; }
    bool valid(std::size_t t, std::size_t r, std::size_t c) const { return labels_[index(t, r, c)] >= 0; }
    void set(std::size_t t, std::size_t r, std::size_t c, int label);

    std::span<const std::int8_t> labels() const { return labels_; }

    LabelCube slice_time(std::size_t t_begin, std::size_t t_end) const;
    LabelCube sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const;

    /// Count per class over valid entries.
    std::vector<std::size_t> histogram() const;

    bool operator==(const LabelCube&) const = default;

private:
    CubeDims dims_;
    std::size_t n_classes_ = 0;
    std::vector<std::int8_t> labels_;
};

/// Drought (1) iff PDSI <= threshold.
LabelCube binarize(const PdsiCube& cube, double threshold = ClassScheme::kDroughtThreshold);
/// Class index = number of thresholds strictly below the value.
LabelCube bin_multiclass(const PdsiCube& cube, const ClassScheme& scheme);
/// Dispatches on scheme.is_binary().
LabelCube apply_scheme(const PdsiCube& cube, const ClassScheme& scheme);

/// Named severity bin for a PDSI value. Cut points are +-1..+-4; an exact negative cut point
/// falls in the drier bin, an exact positive one in the wetter bin.
std::string_view severity_class(double value);

} // namespace droughtcast
