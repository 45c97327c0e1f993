#include "tleap/chart.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace tleap::chart {

namespace {

// 5x7 glyphs, one byte per row, 5 LSBs used (MSB-left).
const std::map<char, std::array<uint8_t, 7>>& glyphs() {
    static const std::map<char, std::array<uint8_t, 7>> g = {
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return g;
}

void fill_rect(Image& img, int x0, int y0, int w, int h,
               const std::array<uint8_t, 3>& c) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x)
            if (img.in_bounds(x, y)) img.set(x, y, c[0], c[1], c[2]);
}

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& text,
               const std::array<uint8_t, 3>& color, int scale) {
    int cx = x;
    for (char raw : text) {
        const char c = char(std::toupper(static_cast<unsigned char>(raw)));
        auto it = glyphs().find(c);
        if (it != glyphs().end()) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[size_t(row)] & (0x10 >> col))
                        fill_rect(img, cx + col * scale, y + row * scale, scale, scale,
                                  color);
        }
        cx += 6 * scale;
    }
}

Image render_bar_chart(const BarChart& chart) {
    const int width = std::max(640, 140 + int(chart.conditions.size()) *
                                         (30 + 34 * int(chart.series.size())));
    const int height = 480;
    const int left = 70, right = width - 30, top = 70, bottom = height - 70;
    Image img(width, height, 255);

    static const std::vector<std::array<uint8_t, 3>> palette = {
        {66, 110, 180}, {208, 130, 60}, {90, 160, 90},
        {170, 80, 80},  {130, 100, 170}, {80, 80, 80},
    };
    const std::array<uint8_t, 3> black{20, 20, 20};
    const std::array<uint8_t, 3> grey{200, 200, 200};

    draw_text(img, left, 24, chart.title, black, 2);

    for (int tick = 0; tick <= 10; ++tick) {
        const double frac = tick / 10.0;
        const int y = bottom - int(frac / chart.y_max * (bottom - top));
        if (y < top) break;
        for (int x = left; x < right; ++x)
            if ((tick % 2) == 0) img.set(x, y, grey[0], grey[1], grey[2]);
        char label[16];
        std::snprintf(label, sizeof(label), "%.1f", frac);
        if (tick % 2 == 0) draw_text(img, left - 34, y - 3, label, black, 1);
    }
    fill_rect(img, left, top, 1, bottom - top, black);
    fill_rect(img, left, bottom, right - left, 1, black);

    const int n_cond = int(chart.conditions.size());
    const int n_series = int(chart.series.size());
    const int cluster_w = (right - left - 20) / std::max(1, n_cond);
    const int bar_w = std::max(8, (cluster_w - 24) / std::max(1, n_series));

    for (int ci = 0; ci < n_cond; ++ci) {
        const int cx0 = left + 10 + ci * cluster_w + 12;
        for (int si = 0; si < n_series; ++si) {
            const double v =
                std::clamp(chart.values[size_t(si)][size_t(ci)], 0.0, chart.y_max);
            const int h = int(v / chart.y_max * (bottom - top));
            const auto& color = palette[size_t(si) % palette.size()];
            fill_rect(img, cx0 + si * bar_w, bottom - h, bar_w - 4, h, color);
            char label[16];
            std::snprintf(label, sizeof(label), "%.2f", chart.values[size_t(si)][size_t(ci)]);
            draw_text(img, cx0 + si * bar_w - 2, bottom - h - 12, label, black, 1);
        }
        draw_text(img, cx0, bottom + 10, chart.conditions[size_t(ci)], black, 1);
    }

    for (int si = 0; si < n_series; ++si) {
        const int lx = left + si * 190;
        const auto& color = palette[size_t(si) % palette.size()];
        fill_rect(img, lx, 44, 14, 10, color);
        draw_text(img, lx + 20, 45, chart.series[size_t(si)], black, 1);
    }
    return img;
}

void render_bar_chart_png(const BarChart& chart, const std::string& path) {
    write_png(render_bar_chart(chart), path);
}

}  // namespace tleap::chart
