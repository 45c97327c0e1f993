#include "tleap/confmap.hpp"

#include <cmath>
#include <stdexcept>

namespace tleap::confmap {

ConfidenceMapStack encode(const Pose& pose, int height, int width, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("encode: sigma must be > 0");
    ConfidenceMapStack stack;
    stack.height = height;
    stack.width = width;
    stack.maps = nn::Tensor<float>({kNumKeypoints, height, width});

    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    for (int k = 0; k < kNumKeypoints; ++k) {
        if (!pose.visible[size_t(k)]) continue;  // all-zero map, masked in the loss
        const double cx = pose.coords[size_t(k)].x;
        const double cy = pose.coords[size_t(k)].y;
        if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
            throw std::invalid_argument("encode: visible keypoint outside the image");
        float* map = stack.maps.data() + size_t(k) * height * width;
        double sum = 0.0;
        for (int y = 0; y < height; ++y) {
            const double dy2 = (y - cy) * (y - cy);
            for (int x = 0; x < width; ++x) {
                const double dx2 = (x - cx) * (x - cx);
                const double v = std::exp(-(dx2 + dy2) * inv_two_sigma2);
                map[size_t(y) * width + x] = float(v);
                sum += v;
            }
        }
        const float inv = float(1.0 / sum);
        for (int i = 0; i < height * width; ++i) map[i] *= inv;
    }
    return stack;
}

Pose decode(const ConfidenceMapStack& stack) {
    if (stack.maps.rank() != 3 || stack.maps.dim(0) != kNumKeypoints)
        throw std::invalid_argument("decode: stack must have 17 maps");
    const int h = stack.height;
    const int w = stack.width;
    Pose pose;
    for (int k = 0; k < kNumKeypoints; ++k) {
        const float* map = stack.maps.data() + size_t(k) * h * w;
        // Row-major scan with strict > keeps the first maximum, which is
        // exactly the smallest-(y, x) tie-break.
        float best = map[0];
        int best_i = 0;
        for (int i = 1; i < h * w; ++i) {
            if (map[i] > best) {
                best = map[i];
                best_i = i;
            }
        }
        pose.coords[size_t(k)].x = best_i % w;
        pose.coords[size_t(k)].y = best_i / w;
        if (best == 0.0f) {
            pose.coords[size_t(k)] = {0.0, 0.0};
            pose.visible[size_t(k)] = false;
        } else {
            pose.visible[size_t(k)] = true;
        }
    }
    return pose;
}

}  // namespace tleap::confmap
