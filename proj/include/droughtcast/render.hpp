#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace droughtcast {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
    bool operator==(const Rgb&) const = default;
};

/// `#rrggbb`.
std::string hex_color(Rgb c);

struct Palette {
    Rgb low{0xd7, 0x30, 0x27};
    Rgb high{0x1a, 0x98, 0x50};

    /// "#rrggbb:#rrggbb" (low then high). Throws ArgumentError otherwise.
    static Palette parse(std::string_view spec);
};

/// Channel-wise linear interpolation, rounded to nearest; t is clamped to [0, 1].
Rgb interpolate(const Palette& palette, double t);

inline constexpr Rgb kMissingColor{0x80, 0x80, 0x80};

struct RenderOptions {
    Palette palette;
    std::optional<double> vmin;
    std::optional<double> vmax;
    std::size_t cell_px = 16;
    std::string title;
};

/**
 * Heat map with one rect per cell (row-major values), NaN cells gray, and a legend with the
 * range end points. A degenerate range maps every finite value to the palette midpoint.
 * Throws ArgumentError for an empty grid or a value count that disagrees with rows * cols.
 */
std::string render_svg(std::size_t rows, std::size_t cols, std::span<const double> values,
                       const RenderOptions& options = {});
void write_svg(const std::string& svg, const std::filesystem::path& path);

} // namespace droughtcast
