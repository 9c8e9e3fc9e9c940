#include "droughtcast/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "droughtcast/errors.hpp"
#include "binary_io.hpp"

namespace droughtcast {

namespace {

Rgb parse_hex(std::string_view text) {
    if (text.size() != 7 || text[0] != '#') {
        throw ArgumentError("colors must look like #rrggbb, got '" + std::string(text) + "'");
    }
    unsigned channel[3];
    for (int i = 0; i < 3; ++i) {
        const std::string part(text.substr(1 + 2 * i, 2));
        char* end = nullptr;
        channel[i] = static_cast<unsigned>(std::strtoul(part.c_str(), &end, 16));
        if (end != part.c_str() + 2) {
            throw ArgumentError("bad hex color '" + std::string(text) + "'");
        }
    }
    return {static_cast<std::uint8_t>(channel[0]), static_cast<std::uint8_t>(channel[1]),
            static_cast<std::uint8_t>(channel[2])};
}

std::string label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(std::string_view text) {
    std::string out;
    for (char ch : text) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

} // namespace

std::string hex_color(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
    return buf;
}

Palette Palette::parse(std::string_view spec) {
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos) {
        throw ArgumentError("palette must be '#rrggbb:#rrggbb'");
    }
    return {parse_hex(spec.substr(0, colon)), parse_hex(spec.substr(colon + 1))};
}

Rgb interpolate(const Palette& palette, double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto mix = [t](std::uint8_t a, std::uint8_t b) {
        return static_cast<std::uint8_t>(std::lround(a + (static_cast<double>(b) - a) * t));
    };
    return {mix(palette.low.r, palette.high.r), mix(palette.low.g, palette.high.g), mix(palette.low.b, palette.high.b)};
}

std::string render_svg(std::size_t rows, std::size_t cols, std::span<const double> values,
                       const RenderOptions& options) {
    if (rows == 0 || cols == 0) {
        throw ArgumentError("cannot render an empty map");
    }
    if (values.size() != rows * cols) {
        throw ArgumentError("map has " + std::to_string(values.size()) + " values for a " + std::to_string(rows) +
                            "x" + std::to_string(cols) + " grid");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : values) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) {
        lo = hi = 0.0;
    }
    lo = options.vmin.value_or(lo);
    hi = options.vmax.value_or(hi);
    const bool degenerate = !(hi > lo);
    auto color = [&](double v) {
        if (!std::isfinite(v)) {
            return kMissingColor;
        }
        return interpolate(options.palette, degenerate ? 0.5 : (v - lo) / (hi - lo));
    };

    const std::size_t px = std::max<std::size_t>(1, options.cell_px);
    const std::size_t top = options.title.empty() ? 0 : 24;
    const std::size_t legend_y = top + rows * px + 10;
    const std::size_t width = std::max<std::size_t>(cols * px, 220);
    const std::size_t height = legend_y + 40;
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" shape-rendering=\"crispEdges\">\n";
    if (!options.title.empty()) {
        out += "<text x=\"0\" y=\"16\" font-family=\"sans-serif\" font-size=\"14\">" + escape(options.title) +
               "</text>\n";
    }
    out += "<g id=\"cells\">\n";
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out += "<rect x=\"" + std::to_string(c * px) + "\" y=\"" + std::to_string(top + r * px) + "\" width=\"" +
                   std::to_string(px) + "\" height=\"" + std::to_string(px) + "\" fill=\"" +
                   hex_color(color(values[r * cols + c])) + "\"/>\n";
        }
    }
    out += "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
    constexpr int kSteps = 10;
    for (int i = 0; i < kSteps; ++i) {
        const double t = static_cast<double>(i) / (kSteps - 1);
        out += "<rect x=\"" + std::to_string(i * 20) + "\" y=\"" + std::to_string(legend_y) +
               "\" width=\"20\" height=\"12\" fill=\"" + hex_color(interpolate(options.palette, t)) + "\"/>\n";
    }
    const std::string y = std::to_string(legend_y + 26);
    out += "<text x=\"0\" y=\"" + y + "\">" + label(lo) + "</text>\n";
    out += "<text x=\"200\" y=\"" + y + "\" text-anchor=\"end\">" + label(hi) + "</text>\n";
    out += "</g>\n</svg>\n";
    return out;
}

void write_svg(const std::string& svg, const std::filesystem::path& path) {
    detail::write_text(path, svg);
}

} // namespace droughtcast
