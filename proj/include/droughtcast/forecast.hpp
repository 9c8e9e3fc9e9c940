#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "droughtcast/pdsi_cube.hpp"

namespace droughtcast {

/**
 * Per-month, per-class probability grids indexed by TARGET month, laid out
 * (t, class, row, col). Months without a forecast have predicted(t) == false.
 * For binary schemes class 1 is drought, so score() returns the drought probability.
 */
class ForecastCube {
public:
    ForecastCube() = default;
    ForecastCube(CubeDims dims, std::size_t n_classes, std::int64_t start_month = 0);

    const CubeDims& dims() const { return dims_; }
    std::size_t n_classes() const { return n_classes_; }
    std::int64_t start_month() const { return start_month_; }

    bool predicted(std::size_t t) const { return predicted_[t] != 0; }
    void set_predicted(std::size_t t, bool on) { predicted_[t] = on ? 1 : 0; }
    std::size_t predicted_months() const;

    std::size_t index(std::size_t t, std::size_t k, std::size_t r, std::size_t c) const {
        return ((t * n_classes_ + k) * dims_.rows + r) * dims_.cols + c;
    }
    float prob(std::size_t t, std::size_t k, std::size_t r, std::size_t c) const { return probs_[index(t, k, r, c)]; }
    void set_prob(std::size_t t, std::size_t k, std::size_t r, std::size_t c, float p) { probs_[index(t, k, r, c)] = p; }
    /// Binary: P(class 1). Multiclass: unused by metrics.
    float score(std::size_t t, std::size_t r, std::size_t c) const { return prob(t, n_classes_ == 2 ? 1 : 0, r, c); }
    /// Most probable class, ties to the lower index.
    int argmax(std::size_t t, std::size_t r, std::size_t c) const;

    std::span<const float> probs() const { return probs_; }
    std::span<float> probs() { return probs_; }
    std::span<const std::uint8_t> predicted_flags() const { return predicted_; }

    /// Keeps only months in [t_begin, t_end) flagged as predicted.
    void restrict_months(std::size_t t_begin, std::size_t t_end);
    ForecastCube sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const;

    bool operator==(const ForecastCube&) const = default;

private:
    CubeDims dims_;
    std::size_t n_classes_ = 0;
    std::int64_t start_month_ = 0;
    std::vector<std::uint8_t> predicted_;
    std::vector<float> probs_;
};

/// Arithmetic mean of member probabilities; predicted months are the intersection.
ForecastCube average_forecasts(std::span<const ForecastCube> members);

/**
 * PDSF v1 little-endian: "PDSF", u32 version, u32 t_len, u32 rows, u32 cols, u32 n_classes,
 * i64 start_month, t_len u8 predicted flags, then f32 probabilities in (t, class, row, col) order.
 */
void save_forecast(const ForecastCube& forecast, const std::filesystem::path& path);
ForecastCube load_forecast(const std::filesystem::path& path);

} // namespace droughtcast
