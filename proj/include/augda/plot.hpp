#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "augda/core.hpp"

namespace augda::plot {

using Rgb = std::array<std::uint8_t, 3>;

struct Canvas {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  ///< row-major, 3 bytes per pixel

    Canvas(int w, int h, Rgb fill = {255, 255, 255});
    void set(int x, int y, Rgb c);
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
    void line(double x0, double y0, double x1, double y1, Rgb c);
    /// Copies `src` with its top-left corner at (x, y).
    void blit(const Canvas& src, int x, int y);
};

/// 8-bit RGB PNG without timestamps, so equal canvases give equal files.
void write_png(const std::filesystem::path& path, const Canvas& c);

/// Distinct colour for series k.
Rgb palette(std::size_t k);

struct Series {
    std::string name;
    std::vector<double> y;  ///< indexed by epoch
};

/// Line chart of several series on shared axes, with gridlines at the
/// y-axis quarter points. Empty series are skipped.
Canvas line_chart(const std::vector<Series>& series, int width = 480, int height = 240);

/// Grey-scale image (min-max scaled) with an optional mask outline:
/// reference in green, prediction in red. Each pixel is drawn `zoom` times.
Canvas render_slice(const Grid<double>& image, const BinMask* reference, const BinMask* prediction, int zoom = 3);

}  // namespace augda::plot
