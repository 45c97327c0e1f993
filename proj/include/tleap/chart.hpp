#pragma once

#include <array>
#include <string>
#include <vector>

#include "tleap/image.hpp"

namespace tleap::chart {

/// Grouped bar chart: one cluster per condition, one bar per series.
struct BarChart {
    std::string title;
    std::vector<std::string> conditions;                // cluster labels
    std::vector<std::string> series;                    // legend entries
    std::vector<std::vector<double>> values;            // [series][condition], 0..1
    double y_max = 1.0;
};

/// 5x7 bitmap text, uppercase letters, digits and basic punctuation.
void draw_text(Image& img, int x, int y, const std::string& text,
               const std::array<uint8_t, 3>& color, int scale = 1);

Image render_bar_chart(const BarChart& chart);

void render_bar_chart_png(const BarChart& chart, const std::string& path);

}  // namespace tleap::chart
