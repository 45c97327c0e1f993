#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tleap {

/// 8-bit RGB image, interleaved row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;  // size = width * height * 3

    Image() = default;
    Image(int w, int h, uint8_t fill = 0)
        : width(w), height(h), pixels(size_t(w) * size_t(h) * 3, fill) {}

    uint8_t* px(int x, int y) { return &pixels[(size_t(y) * width + x) * 3]; }
    const uint8_t* px(int x, int y) const {
        return &pixels[(size_t(y) * width + x) * 3];
    }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        uint8_t* p = px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
};

/// Bilinear sample of one channel at continuous position (x, y), with
/// coordinates clamped to the image border.
double bilinear_sample(const Image& img, double x, double y, int channel);

void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

/// Reads only the header to get dimensions without decoding pixel data.
void read_png_size(const std::string& path, int& width, int& height);

}  // namespace tleap
