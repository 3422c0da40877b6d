#include "augda/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace augda::plot {

Canvas::Canvas(int w, int h, Rgb fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("Canvas: empty size");
    rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb.begin() + i);
}

void Canvas::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(width, x1); ++x) set(x, y, c);
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c) {
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        set(x, y, c);
        set(x, y + 1, c);
    }
}

void Canvas::blit(const Canvas& src, int x, int y) {
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c) {
            const auto* p = &src.rgb[(static_cast<std::size_t>(r) * src.width + c) * 3];
            set(x + c, y + r, {p[0], p[1], p[2]});
        }
}

void write_png(const std::filesystem::path& path, const Canvas& c) {
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!f) throw std::runtime_error("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("write_png: libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error on " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(c.width), static_cast<png_uint_32>(c.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < c.height; ++y)
        png_write_row(png, const_cast<png_bytep>(&c.rgb[static_cast<std::size_t>(y) * c.width * 3]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Rgb palette(std::size_t k) {
    static const Rgb colours[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                  {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
    return colours[k % std::size(colours)];
}

Canvas line_chart(const std::vector<Series>& series, int width, int height) {
    Canvas cv(width, height);
    const int left = 8, right = width - 8, top = 8, bottom = height - 8;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t n = 0;
    for (const auto& s : series) {
        for (double v : s.y)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        n = std::max(n, s.y.size());
    }
    const Rgb grid{225, 225, 225}, axis{60, 60, 60};
    for (int q = 0; q <= 4; ++q) {
        const int y = top + (bottom - top) * q / 4;
        cv.fill_rect(left, y, right, y + 1, grid);
    }
    cv.fill_rect(left, top, left + 1, bottom + 1, axis);
    cv.fill_rect(left, bottom, right, bottom + 1, axis);
    if (n < 2 || !std::isfinite(lo)) return cv;
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    auto px = [&](std::size_t i) { return left + (right - left) * static_cast<double>(i) / static_cast<double>(n - 1); };
    auto py = [&](double v) { return bottom - (bottom - top) * (v - lo) / (hi - lo); };
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& y = series[k].y;
        for (std::size_t i = 1; i < y.size(); ++i)
            if (std::isfinite(y[i - 1]) && std::isfinite(y[i]))
                cv.line(px(i - 1), py(y[i - 1]), px(i), py(y[i]), palette(k));
    }
    return cv;
}

Canvas render_slice(const Grid<double>& image, const BinMask* reference, const BinMask* prediction, int zoom) {
    const int rows = static_cast<int>(image.rows()), cols = static_cast<int>(image.cols());
    Canvas cv(cols * zoom, rows * zoom);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : image.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo > 0 ? hi - lo : 1.0;
    // Outline pixels: inside the mask with a 4-neighbour outside it.
    auto edge = [&](const BinMask* m, int r, int c) {
        if (!m || !m->at(static_cast<std::size_t>(r), static_cast<std::size_t>(c))) return false;
        const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            const int rr = r + dr[k], cc = c + dc[k];
            if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) return true;
            if (!m->at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc))) return true;
        }
        return false;
    };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (image(r, c) - lo) / span));
            Rgb colour{g, g, g};
            if (edge(reference, r, c)) colour = {40, 220, 40};
            if (edge(prediction, r, c)) colour = {230, 30, 30};
            cv.fill_rect(c * zoom, r * zoom, (c + 1) * zoom, (r + 1) * zoom, colour);
        }
    return cv;
}

}  // namespace augda::plot
