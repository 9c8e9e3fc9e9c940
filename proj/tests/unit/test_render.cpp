#include <doctest.h>

#include <cmath>
#include <regex>

#include "droughtcast/errors.hpp"
#include "droughtcast/render.hpp"

using namespace droughtcast;

namespace {

std::vector<std::string> cell_fills(const std::string& svg) {
    const auto begin = svg.find("<g id=\"cells\">");
    const auto end = svg.find("</g>", begin);
    const std::string cells = svg.substr(begin, end - begin);
    std::vector<std::string> fills;
    const std::regex fill("fill=\"(#[0-9a-f]{6})\"");
    for (auto it = std::sregex_iterator(cells.begin(), cells.end(), fill); it != std::sregex_iterator(); ++it) {
        fills.push_back((*it)[1]);
    }
    return fills;
}

} // namespace

TEST_SUITE("render") {

TEST_CASE("colors and palettes") {
    CHECK(hex_color({0xd7, 0x30, 0x27}) == "#d73027");
    const Palette p = Palette::parse("#000000:#ffffff");
    CHECK(interpolate(p, 0.0) == Rgb{0, 0, 0});
    CHECK(interpolate(p, 1.0) == Rgb{255, 255, 255});
    CHECK(interpolate(p, 0.5) == Rgb{128, 128, 128});
    CHECK(interpolate(p, 7.0) == Rgb{255, 255, 255});
    CHECK_THROWS_AS(Palette::parse("#000000"), ArgumentError);
    CHECK_THROWS_AS(Palette::parse("#00000g:#ffffff"), ArgumentError);
}

TEST_CASE("cells map to the palette end points") {
    const std::vector<double> two{0.2, 0.9};
    const auto fills = cell_fills(render_svg(1, 2, two));
    REQUIRE(fills.size() == 2);
    CHECK(fills[0] == "#d73027");
    CHECK(fills[1] == "#1a9850");

    const std::vector<double> same(6, 0.7);
    const auto flat = cell_fills(render_svg(2, 3, same));
    REQUIRE(flat.size() == 6);
    for (const auto& f : flat) {
        CHECK(f == flat.front());
    }

    const std::vector<double> gap{0.1, std::nan(""), 0.3, 0.6};
    CHECK(cell_fills(render_svg(2, 2, gap))[1] == hex_color(kMissingColor));

    RenderOptions fixed;
    fixed.vmin = 0.0;
    fixed.vmax = 1.0;
    const std::vector<double> mid{0.5};
    CHECK(cell_fills(render_svg(1, 1, mid, fixed))[0] == hex_color(interpolate(fixed.palette, 0.5)));
}

TEST_CASE("output is deterministic and validated") {
    const std::vector<double> v{0.1, 0.5, 0.9, 0.3};
    RenderOptions o;
    o.title = "a <b>";
    const std::string a = render_svg(2, 2, v, o);
    CHECK(a == render_svg(2, 2, v, o));
    CHECK(a.find("a &lt;b&gt;") != std::string::npos);
    CHECK_THROWS_AS(render_svg(0, 2, std::vector<double>{}), ArgumentError);
    CHECK_THROWS_AS(render_svg(2, 2, std::vector<double>{1.0}), ArgumentError);
}

} // TEST_SUITE
