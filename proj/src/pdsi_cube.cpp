#include "droughtcast/pdsi_cube.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "droughtcast/errors.hpp"
#include "droughtcast/labeler.hpp"
#include "binary_io.hpp"

namespace droughtcast {

using detail::ByteReader;
using detail::put_le;

namespace {

constexpr char kMagic[5] = "PDSC";
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 3 * 4 + 8;

void check_value(float v) {
    if (!std::isnan(v) && !(std::fabs(v) <= PdsiCube::kSanityBound)) {
        throw ArgumentError("PDSI value " + std::to_string(v) + " outside [-20, 20]");
    }
}

} // namespace

PdsiCube::PdsiCube(CubeDims dims, std::int64_t start_month)
    : dims_(dims),
      start_month_(start_month),
      values_(dims.size(), std::numeric_limits<float>::quiet_NaN()),
      mask_(dims.size(), 0) {
    if (dims.t_len == 0 || dims.rows == 0 || dims.cols == 0) {
        throw ArgumentError("cube dimensions must be positive");
    }
}

PdsiCube::PdsiCube(CubeDims dims, std::vector<float> values, std::int64_t start_month)
    : dims_(dims), start_month_(start_month), values_(std::move(values)) {
    if (dims.t_len == 0 || dims.rows == 0 || dims.cols == 0) {
        throw ArgumentError("cube dimensions must be positive");
    }
    if (values_.size() != dims.size()) {
        throw ArgumentError("cube payload has " + std::to_string(values_.size()) + " entries, expected " +
                            std::to_string(dims.size()));
    }
    mask_.resize(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        check_value(values_[i]);
        if (std::isnan(values_[i])) {
            values_[i] = std::numeric_limits<float>::quiet_NaN();
        }
        mask_[i] = std::isnan(values_[i]) ? 0 : 1;
    }
}

void PdsiCube::set(std::size_t t, std::size_t r, std::size_t c, float v) {
    check_value(v);
    const auto i = index(t, r, c);
    if (std::isnan(v)) {
        values_[i] = std::numeric_limits<float>::quiet_NaN();
        mask_[i] = 0;
    } else {
        values_[i] = v;
        mask_[i] = 1;
    }
}

void PdsiCube::set_missing(std::size_t t, std::size_t r, std::size_t c) {
    set(t, r, c, std::numeric_limits<float>::quiet_NaN());
}

std::size_t PdsiCube::valid_count() const {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

PdsiCube PdsiCube::slice_time(std::size_t t_begin, std::size_t t_end) const {
    if (t_begin >= t_end || t_end > dims_.t_len) {
        throw ArgumentError("invalid time slice");
    }
    const std::size_t plane = dims_.cells();
    PdsiCube out({t_end - t_begin, dims_.rows, dims_.cols}, start_month_ + static_cast<std::int64_t>(t_begin));
    std::copy(values_.begin() + static_cast<std::ptrdiff_t>(t_begin * plane),
              values_.begin() + static_cast<std::ptrdiff_t>(t_end * plane), out.values_.begin());
    std::copy(mask_.begin() + static_cast<std::ptrdiff_t>(t_begin * plane),
              mask_.begin() + static_cast<std::ptrdiff_t>(t_end * plane), out.mask_.begin());
    return out;
}

PdsiCube PdsiCube::sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const {
    if (rows == 0 || cols == 0 || r0 + rows > dims_.rows || c0 + cols > dims_.cols) {
        throw ArgumentError("sub-grid outside cube");
    }
    PdsiCube out({dims_.t_len, rows, cols}, start_month_);
    for (std::size_t t = 0; t < dims_.t_len; ++t) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                const auto src = index(t, r0 + r, c0 + c);
                const auto dst = out.index(t, r, c);
                out.values_[dst] = values_[src];
                out.mask_[dst] = mask_[src];
            }
        }
    }
    return out;
}

bool PdsiCube::operator==(const PdsiCube& other) const {
    if (dims_ != other.dims_ || start_month_ != other.start_month_ || mask_ != other.mask_) {
        return false;
    }
    return std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

std::vector<std::uint8_t> encode_cube(const PdsiCube& cube) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + cube.dims().size() * 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cube.t_len()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cube.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cube.cols()));
    put_le<std::int64_t>(out, cube.start_month());
    for (float v : cube.values()) {
        put_le<float>(out, v);
    }
    return out;
}

PdsiCube decode_cube(std::span<const std::uint8_t> bytes) {
    ByteReader in(bytes);
    if (!in.magic(kMagic)) {
        throw FormatError("not a PDSC file (bad magic)");
    }
    if (bytes.size() < kHeaderBytes) {
        throw CorruptionError("PDSC header truncated");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) {
        throw UnsupportedVersionError("unsupported PDSC version " + std::to_string(version));
    }
    CubeDims dims;
    dims.t_len = in.get<std::uint32_t>();
    dims.rows = in.get<std::uint32_t>();
    dims.cols = in.get<std::uint32_t>();
    const auto start_month = in.get<std::int64_t>();
    if (dims.t_len == 0 || dims.rows == 0 || dims.cols == 0) {
        throw CorruptionError("PDSC header has a zero dimension");
    }
    if (in.remaining() != dims.size() * 4) {
        throw CorruptionError("PDSC payload has " + std::to_string(in.remaining()) + " bytes, expected " +
                              std::to_string(dims.size() * 4));
    }
    std::vector<float> values(dims.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = in.get<float>();
        if (!std::isnan(values[i]) && !(std::fabs(values[i]) <= PdsiCube::kSanityBound)) {
            throw CorruptionError("PDSC value out of range at entry " + std::to_string(i));
        }
    }
    return PdsiCube(dims, std::move(values), start_month);
}

PdsiCube load_cube(const std::filesystem::path& path) {
    return decode_cube(detail::read_file(path));
}

void save_cube(const PdsiCube& cube, const std::filesystem::path& path) {
    detail::write_file(path, encode_cube(cube));
}

PdsiCube load_cube_csv(const std::filesystem::path& path, std::int64_t start_month, const CubeDims* dims) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError("empty CSV " + path.string());
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != "t,row,col,pdsi") {
        throw FormatError("CSV header must be 't,row,col,pdsi'");
    }
    struct Record {
        std::size_t t, r, c;
        float v;
    };
    std::vector<Record> records;
    CubeDims inferred;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        std::istringstream ss(line);
        std::string field[4];
        for (auto& f : field) {
            if (!std::getline(ss, f, ',')) {
                throw FormatError("CSV line " + std::to_string(line_no) + ": expected 4 fields");
            }
        }
        try {
            Record rec{std::stoull(field[0]), std::stoull(field[1]), std::stoull(field[2]), std::stof(field[3])};
            inferred.t_len = std::max(inferred.t_len, rec.t + 1);
            inferred.rows = std::max(inferred.rows, rec.r + 1);
            inferred.cols = std::max(inferred.cols, rec.c + 1);
            records.push_back(rec);
        } catch (const std::logic_error&) {
            throw FormatError("CSV line " + std::to_string(line_no) + ": unparsable record");
        }
    }
    const CubeDims use = dims ? *dims : inferred;
    if (use.size() == 0) {
        throw EmptyDataError("CSV holds no records");
    }
    PdsiCube cube(use, start_month);
    for (const auto& rec : records) {
        if (rec.t >= use.t_len || rec.r >= use.rows || rec.c >= use.cols) {
            throw FormatError("CSV record outside declared dimensions");
        }
        try {
            cube.set(rec.t, rec.r, rec.c, rec.v);
        } catch (const ArgumentError& e) {
            throw FormatError(e.what());
        }
    }
    return cube;
}

std::size_t train_length(std::size_t t_len, double train_frac) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
        throw ArgumentError("train_frac must lie in (0, 1)");
    }
    const auto n = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(t_len)));
    if (n < 1 || n >= t_len) {
        throw ArgumentError("degenerate out-of-time split: one side would be empty");
    }
    return n;
}

std::pair<PdsiCube, PdsiCube> out_of_time_split(const PdsiCube& cube, double train_frac) {
    const auto n = train_length(cube.t_len(), train_frac);
    return {cube.slice_time(0, n), cube.slice_time(n, cube.t_len())};
}

CropWindow center_crop_window(std::size_t rows, std::size_t cols, double keep_area_frac) {
    if (!(keep_area_frac > 0.0 && keep_area_frac <= 1.0)) {
        throw ArgumentError("keep_area_frac must lie in (0, 1]");
    }
    const double side = std::sqrt(keep_area_frac);
    CropWindow w;
    w.rows = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(rows) * side)));
    w.cols = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(cols) * side)));
    w.rows = std::min(w.rows, rows);
    w.cols = std::min(w.cols, cols);
    w.r0 = (rows - w.rows) / 2;
    w.c0 = (cols - w.cols) / 2;
    return w;
}

PdsiCube crop_center(const PdsiCube& cube, double keep_area_frac) {
    const auto w = center_crop_window(cube.rows(), cube.cols(), keep_area_frac);
    return cube.sub_grid(w.r0, w.c0, w.rows, w.cols);
}

RegionStats summarize(const PdsiCube& cube, const ClassScheme& scheme) {
    if (!scheme.is_binary()) {
        throw ArgumentError("summarize needs a binary scheme");
    }
    const double threshold = scheme.thresholds().front();
    std::size_t valid = 0;
    std::size_t drought = 0;
    const auto values = cube.values();
    const auto mask = cube.mask();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) {
            ++valid;
            drought += values[i] <= threshold ? 1 : 0;
        }
    }
    if (valid == 0) {
        throw EmptyDataError("cube has no valid entries");
    }
    RegionStats stats;
    stats.span_months = cube.t_len();
    stats.pct_drought = 100.0 * static_cast<double>(drought) / static_cast<double>(valid);
    stats.pct_normal = 100.0 * static_cast<double>(valid - drought) / static_cast<double>(valid);
    return stats;
}

double value_quantile(const PdsiCube& cube, double q) {
    if (!(q >= 0.0 && q <= 1.0)) {
        throw ArgumentError("quantile must lie in [0, 1]");
    }
    std::vector<double> vals;
    vals.reserve(cube.valid_count());
    const auto values = cube.values();
    const auto mask = cube.mask();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i]) {
            vals.push_back(values[i]);
        }
    }
    if (vals.empty()) {
        throw EmptyDataError("cube has no valid entries");
    }
    std::sort(vals.begin(), vals.end());
    const double pos = q * static_cast<double>(vals.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, vals.size() - 1);
    return vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
}

} // namespace droughtcast
