#pragma once

#include "tleap/skeleton.hpp"
#include "tleap/tensor.hpp"

namespace tleap::confmap {

/// 17 per-keypoint maps at the input spatial resolution. Each map of a
/// visible keypoint is a normalized distribution (sums to 1); maps of
/// invisible keypoints are all-zero so the loss can mask them.
struct ConfidenceMapStack {
    nn::Tensor<float> maps;  // [17, H, W]
    int height = 0;
    int width = 0;

    float at(int k, int y, int x) const {
        return maps[(size_t(k) * height + y) * size_t(width) + x];
    }
};

/// Encodes a pose as one truncated-Gaussian distribution per keypoint,
/// evaluated at pixel centers and normalized to sum 1. sigma must be > 0
/// and visible coordinates must lie inside [0,width) x [0,height).
ConfidenceMapStack encode(const Pose& pose, int height, int width, double sigma);

/// Decodes predicted maps back to coordinates by global argmax per map,
/// ties broken by smallest y then smallest x. An all-zero map decodes to
/// (0,0) with visibility false.
Pose decode(const ConfidenceMapStack& maps);

}  // namespace tleap::confmap
