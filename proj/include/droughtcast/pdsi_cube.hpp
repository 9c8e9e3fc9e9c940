#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace droughtcast {

class ClassScheme;

/// Grid extent of a monthly raster stack.
struct CubeDims {
    std::size_t t_len = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t cells() const { return rows * cols; }
    std::size_t size() const { return t_len * rows * cols; }
    bool operator==(const CubeDims&) const = default;
};

/**
 * Monthly PDSI values laid out t-major, then row, then column.
 *
 * Missing entries are held as NaN in `values` and false in `mask`; the two always agree.
 * start_month counts months since 1958-01.
 */
class PdsiCube {
public:
    static constexpr double kSanityBound = 20.0;

    PdsiCube() = default;
    /// All entries start missing.
    PdsiCube(CubeDims dims, std::int64_t start_month = 0);
    /// NaN entries become missing. Throws ArgumentError on size mismatch or out-of-bound values.
    PdsiCube(CubeDims dims, std::vector<float> values, std::int64_t start_month = 0);

    const CubeDims& dims() const { return dims_; }
    std::size_t t_len() const { return dims_.t_len; }
    std::size_t rows() const { return dims_.rows; }
    std::size_t cols() const { return dims_.cols; }
    std::int64_t start_month() const { return start_month_; }

    std::size_t index(std::size_t t, std::size_t r, std::size_t c) const {
        return (t * dims_.rows + r) * dims_.cols + c;
    }
    float value(std::size_t t, std::size_t r, std::size_t c) const { return values_[index(t, r, c)]; }
    bool valid(std::size_t t, std::size_t r, std::size_t c) const { return mask_[index(t, r, c)] != 0; }

    /// Sets a valid value; NaN marks the entry missing.
    void set(std::size_t t, std::size_t r, std::size_t c, float v);
    void set_missing(std::size_t t, std::size_t r, std::size_t c);

    std::span<const float> values() const { return values_; }
    std::span<const std::uint8_t> mask() const { return mask_; }
    std::size_t valid_count() const;

    /// Months [t_begin, t_end) as a new cube with start_month shifted accordingly.
    PdsiCube slice_time(std::size_t t_begin, std::size_t t_end) const;
    /// Spatial window [r0, r0+rows) x [c0, c0+cols) over all months.
    PdsiCube sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const;

    bool operator==(const PdsiCube& other) const;

private:
    CubeDims dims_;
    std::int64_t start_month_ = 0;
    std::vector<float> values_;
    std::vector<std::uint8_t> mask_;
};

/// Share of valid entries on either side of the drought threshold, in percent.
struct RegionStats {
    std::size_t span_months = 0;
    double pct_normal = 0.0;
    double pct_drought = 0.0;
};

/// Reads a PDSC v1 file.
PdsiCube load_cube(const std::filesystem::path& path);
/// Writes a PDSC v1 file. Output bytes depend only on the cube.
void save_cube(const PdsiCube& cube, const std::filesystem::path& path);

/// In-memory PDSC encoding; save_cube writes exactly these bytes.
std::vector<std::uint8_t> encode_cube(const PdsiCube& cube);
PdsiCube decode_cube(std::span<const std::uint8_t> bytes);

/**
 * CSV ingestion: header `t,row,col,pdsi`, one record per valid entry. Dimensions are the
 * maxima of the indices plus one unless `dims` is given; absent entries are missing.
 */
PdsiCube load_cube_csv(const std::filesystem::path& path, std::int64_t start_month = 0,
                       const CubeDims* dims = nullptr);

/// Chronological split: train keeps months [0, floor(train_frac * t_len)).
std::pair<PdsiCube, PdsiCube> out_of_time_split(const PdsiCube& cube, double train_frac);
std::size_t train_length(std::size_t t_len, double train_frac);

/// Centered sub-grid extent keeping `keep_area_frac` of the area (per-side scale sqrt(keep)).
struct CropWindow {
    std::size_t r0 = 0;
    std::size_t c0 = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};
CropWindow center_crop_window(std::size_t rows, std::size_t cols, double keep_area_frac);
PdsiCube crop_center(const PdsiCube& cube, double keep_area_frac);

/// Percent of valid entries at/below the binary scheme threshold.
RegionStats summarize(const PdsiCube& cube, const ClassScheme& scheme);

/// Empirical quantile (linear interpolation between order statistics) over valid entries.
double value_quantile(const PdsiCube& cube, double q);

} // namespace droughtcast
