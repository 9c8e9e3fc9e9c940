#include "droughtcast/labeler.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "droughtcast/errors.hpp"

namespace droughtcast {

ClassScheme::ClassScheme(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
    if (thresholds_.empty()) {
        throw ArgumentError("class scheme needs at least one threshold");
    }
    for (std::size_t i = 0; i < thresholds_.size(); ++i) {
        if (!std::isfinite(thresholds_[i])) {
            throw ArgumentError("class thresholds must be finite");
        }
        if (i > 0 && !(thresholds_[i] > thresholds_[i - 1])) {
            throw ArgumentError("class thresholds must be strictly increasing");
        }
    }
    if (thresholds_.size() > 126) {
        throw ArgumentError("too many classes");
    }
}

int ClassScheme::interval(double value) const {
    return static_cast<int>(std::lower_bound(thresholds_.begin(), thresholds_.end(), value) - thresholds_.begin());
}

int ClassScheme::label(double value) const {
    const int k = interval(value);
    return is_binary() ? 1 - k : k;
}

LabelCube::LabelCube(CubeDims dims, std::size_t n_classes)
    : dims_(dims), n_classes_(n_classes), labels_(dims.size(), kMissing) {
    if (n_classes < 2) {
        throw ArgumentError("label cube needs at least two classes");
    }
}

void LabelCube::set(std::size_t t, std::size_t r, std::size_t c, int label) {
    if (label < kMissing || label >= static_cast<int>(n_classes_)) {
        throw ArgumentError("label out of range");
    }
    labels_[index(t, r, c)] = static_cast<std::int8_t>(label);
}

LabelCube LabelCube::slice_time(std::size_t t_begin, std::size_t t_end) const {
    if (t_begin >= t_end || t_end > dims_.t_len) {
        throw ArgumentError("invalid time slice");
    }
    LabelCube out({t_end - t_begin, dims_.rows, dims_.cols}, n_classes_);
    const auto plane = static_cast<std::ptrdiff_t>(dims_.cells());
    std::copy(labels_.begin() + static_cast<std::ptrdiff_t>(t_begin) * plane,
              labels_.begin() + static_cast<std::ptrdiff_t>(t_end) * plane, out.labels_.begin());
    return out;
}

LabelCube LabelCube::sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const {
    if (rows == 0 || cols == 0 || r0 + rows > dims_.rows || c0 + cols > dims_.cols) {
        throw ArgumentError("sub-grid outside label cube");
    }
    LabelCube out({dims_.t_len, rows, cols}, n_classes_);
    for (std::size_t t = 0; t < dims_.t_len; ++t) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                out.labels_[out.index(t, r, c)] = labels_[index(t, r0 + r, c0 + c)];
            }
        }
    }
    return out;
}

std::vector<std::size_t> LabelCube::histogram() const {
    std::vector<std::size_t> counts(n_classes_, 0);
    for (auto l : labels_) {
        if (l >= 0) {
            ++counts[static_cast<std::size_t>(l)];
        }
    }
    return counts;
}

namespace {

LabelCube label_with(const PdsiCube& cube, const ClassScheme& scheme) {
    LabelCube out(cube.dims(), scheme.n_classes());
    const auto& d = cube.dims();
    for (std::size_t t = 0; t < d.t_len; ++t) {
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) {
                if (cube.valid(t, r, c)) {
                    out.set(t, r, c, scheme.label(cube.value(t, r, c)));
                }
            }
        }
    }
    return out;
}

} // namespace

LabelCube binarize(const PdsiCube& cube, double threshold) {
    return label_with(cube, ClassScheme::binary(threshold));
}

LabelCube bin_multiclass(const PdsiCube& cube, const ClassScheme& scheme) {
    LabelCube out(cube.dims(), scheme.n_classes());
    const auto& d = cube.dims();
    for (std::size_t t = 0; t < d.t_len; ++t) {
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) {
                if (cube.valid(t, r, c)) {
                    out.set(t, r, c, scheme.interval(cube.value(t, r, c)));
                }
            }
        }
    }
    return out;
}

LabelCube apply_scheme(const PdsiCube& cube, const ClassScheme& scheme) {
    return scheme.is_binary() ? label_with(cube, scheme) : bin_multiclass(cube, scheme);
}

std::string_view severity_class(double value) {
    if (!std::isfinite(value)) {
        throw ArgumentError("severity_class needs a finite value");
    }
    // Dry side: (low, high]; wet side: [low, high).
    if (value <= -4.0) return "Extreme dry spell";
    if (value <= -3.0) return "Severe dry spell";
    if (value <= -2.0) return "Moderate dry spell";
    if (value <= -1.0) return "Mild dry spell";
    if (value < 1.0) return "Normal";
    if (value < 2.0) return "Mild wet spell";
    if (value < 3.0) return "Moderate wet spell";
    if (value < 4.0) return "Severe wet spell";
    return "Extreme wet spell";
}

} // namespace droughtcast
