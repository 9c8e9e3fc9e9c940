#include "droughtcast/forecast.hpp"

#include <algorithm>
#include <string>

#include "droughtcast/errors.hpp"
#include "binary_io.hpp"

namespace droughtcast {

namespace {
constexpr char kMagic[5] = "PDSF";
constexpr std::uint32_t kVersion = 1;
} // namespace

ForecastCube::ForecastCube(CubeDims dims, std::size_t n_classes, std::int64_t start_month)
    : dims_(dims),
      n_classes_(n_classes),
      start_month_(start_month),
      predicted_(dims.t_len, 0),
      probs_(dims.size() * n_classes, 0.0f) {
    if (n_classes < 2) {
        throw ArgumentError("forecast needs at least two classes");
    }
}

std::size_t ForecastCube::predicted_months() const {
    return static_cast<std::size_t>(std::count(predicted_.begin(), predicted_.end(), std::uint8_t{1}));
}

int ForecastCube::argmax(std::size_t t, std::size_t r, std::size_t c) const {
    int best = 0;
    float best_p = prob(t, 0, r, c);
    for (std::size_t k = 1; k < n_classes_; ++k) {
        const float p = prob(t, k, r, c);
        if (p > best_p) {
            best_p = p;
            best = static_cast<int>(k);
        }
    }
    return best;
}

void ForecastCube::restrict_months(std::size_t t_begin, std::size_t t_end) {
    for (std::size_t t = 0; t < dims_.t_len; ++t) {
        if (t < t_begin || t >= t_end) {
            predicted_[t] = 0;
        }
    }
}

ForecastCube ForecastCube::sub_grid(std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) const {
    if (rows == 0 || cols == 0 || r0 + rows > dims_.rows || c0 + cols > dims_.cols) {
        throw ArgumentError("sub-grid outside forecast");
    }
    ForecastCube out({dims_.t_len, rows, cols}, n_classes_, start_month_);
    out.predicted_ = predicted_;
    for (std::size_t t = 0; t < dims_.t_len; ++t) {
        for (std::size_t k = 0; k < n_classes_; ++k) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    out.set_prob(t, k, r, c, prob(t, k, r0 + r, c0 + c));
                }
            }
        }
    }
    return out;
}

ForecastCube average_forecasts(std::span<const ForecastCube> members) {
    if (members.empty()) {
        throw ArgumentError("ensemble needs at least one member");
    }
    const auto& first = members.front();
    ForecastCube out(first.dims(), first.n_classes(), first.start_month());
    for (const auto& m : members) {
        if (!(m.dims() == first.dims()) || m.n_classes() != first.n_classes()) {
            throw ArgumentError("ensemble members differ in shape");
        }
    }
    for (std::size_t t = 0; t < first.dims().t_len; ++t) {
        bool all = true;
        for (const auto& m : members) {
            all = all && m.predicted(t);
        }
        out.set_predicted(t, all);
    }
    auto dst = out.probs();
    const double n = static_cast<double>(members.size());
    for (std::size_t i = 0; i < dst.size(); ++i) {
        double acc = 0.0;
        for (const auto& m : members) {
            acc += m.probs()[i];
        }
        dst[i] = static_cast<float>(acc / n);
    }
    return out;
}

void save_forecast(const ForecastCube& forecast, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    detail::put_le<std::uint32_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(forecast.dims().t_len));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(forecast.dims().rows));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(forecast.dims().cols));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(forecast.n_classes()));
    detail::put_le<std::int64_t>(out, forecast.start_month());
    for (auto f : forecast.predicted_flags()) {
        out.push_back(f);
    }
    for (float p : forecast.probs()) {
        detail::put_le<float>(out, p);
    }
    detail::write_file(path, out);
}

ForecastCube load_forecast(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader in(bytes);
    if (!in.magic(kMagic)) {
        throw FormatError("not a PDSF forecast file (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) {
        throw UnsupportedVersionError("unsupported PDSF version " + std::to_string(version));
    }
    CubeDims dims;
    dims.t_len = in.get<std::uint32_t>();
    dims.rows = in.get<std::uint32_t>();
    dims.cols = in.get<std::uint32_t>();
    const auto n_classes = in.get<std::uint32_t>();
    const auto start = in.get<std::int64_t>();
    if (dims.size() == 0 || n_classes < 2) {
        throw CorruptionError("PDSF header is degenerate");
    }
    if (in.remaining() != dims.t_len + dims.size() * n_classes * 4) {
        throw CorruptionError("PDSF payload size mismatch");
    }
    ForecastCube out(dims, n_classes, start);
    for (std::size_t t = 0; t < dims.t_len; ++t) {
        out.set_predicted(t, in.get<std::uint8_t>() != 0);
    }
    for (auto& p : out.probs()) {
        p = in.get<float>();
    }
    return out;
}

} // namespace droughtcast
