#include <doctest.h>

#include <cmath>

#include "tleap/confmap.hpp"
#include "tleap/rng.hpp"

using namespace tleap;
using confmap::ConfidenceMapStack;

namespace {

Pose pose_all_at(double x, double y) {
    Pose p;
    for (int k = 0; k < kNumKeypoints; ++k) p.coords[size_t(k)] = {x, y};
    return p;
}

double map_sum(const ConfidenceMapStack& s, int k) {
    double sum = 0;
    for (int i = 0; i < s.height * s.width; ++i)
        sum += double(s.maps[size_t(k) * s.height * s.width + size_t(i)]);
    return sum;
}

}  // namespace

TEST_CASE("encode: argmax at the ground-truth pixel, sigma 5 on 200x200") {
    Pose p = pose_all_at(100, 100);
    ConfidenceMapStack s = confmap::encode(p, 200, 200, 5.0);
    Pose dec = confmap::decode(s);
    for (int k = 0; k < kNumKeypoints; ++k) {
        CHECK(dec.coords[size_t(k)].x == 100);
        CHECK(dec.coords[size_t(k)].y == 100);
    }
}

TEST_CASE("encode: one-sigma ratio equals exp(-1/2)") {
    Pose p = pose_all_at(100, 100);
    ConfidenceMapStack s = confmap::encode(p, 200, 200, 5.0);
    const double ratio = double(s.at(0, 100, 105)) / double(s.at(0, 100, 100));
    CHECK(ratio == doctest::Approx(std::exp(-0.5)).epsilon(1e-5));
    CHECK(std::exp(-0.5) == doctest::Approx(0.6065).epsilon(1e-3));
}

TEST_CASE("encode: corner keypoint still normalizes to 1") {
    Pose p = pose_all_at(0, 0);
    ConfidenceMapStack s = confmap::encode(p, 64, 64, 5.0);
    Pose dec = confmap::decode(s);
    CHECK(dec.coords[0].x == 0);
    CHECK(dec.coords[0].y == 0);
    for (int k = 0; k < kNumKeypoints; ++k)
        CHECK(map_sum(s, k) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("encode: invisible keypoint gives an all-zero map") {
    Pose p = pose_all_at(10, 10);
    p.visible[3] = false;
    ConfidenceMapStack s = confmap::encode(p, 32, 32, 5.0);
    CHECK(map_sum(s, 3) == 0.0);
    Pose dec = confmap::decode(s);
    CHECK(!dec.visible[3]);
    CHECK(dec.coords[3].x == 0);
    CHECK(dec.coords[3].y == 0);
}

TEST_CASE("encode rejects bad inputs") {
    Pose p = pose_all_at(10, 10);
    CHECK_THROWS_AS(confmap::encode(p, 32, 32, 0.0), std::invalid_argument);
    p.coords[0] = {32, 10};  // visible but out of bounds
    CHECK_THROWS_AS(confmap::encode(p, 32, 32, 5.0), std::invalid_argument);
}

TEST_CASE("roundtrip: 1000 random integer poses decode exactly") {
    Rng rng(7);
    for (int trial = 0; trial < 1000 / kNumKeypoints + 1; ++trial) {
        Pose p;
        for (int k = 0; k < kNumKeypoints; ++k)
            p.coords[size_t(k)] = {double(rng.uniform_index(200)),
                                   double(rng.uniform_index(200))};
        ConfidenceMapStack s = confmap::encode(p, 200, 200, 5.0);
        Pose dec = confmap::decode(s);
        for (int k = 0; k < kNumKeypoints; ++k) {
            CHECK(dec.coords[size_t(k)].x == p.coords[size_t(k)].x);
            CHECK(dec.coords[size_t(k)].y == p.coords[size_t(k)].y);
        }
        for (int k = 0; k < kNumKeypoints; ++k)
            CHECK(map_sum(s, k) == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("monotonic decay along rays from the peak") {
    Pose p = pose_all_at(60.4, 41.7);
    ConfidenceMapStack s = confmap::encode(p, 100, 100, 5.0);
    // axis-aligned and diagonal rays from the argmax
    const int cx = 60, cy = 42;
    const int dirs[4][2] = {{1, 0}, {0, 1}, {-1, -1}, {1, 1}};
    for (auto& d : dirs) {
        double prev = s.at(0, cy, cx);
        for (int step = 1;; ++step) {
            const int x = cx + d[0] * step, y = cy + d[1] * step;
            if (x < 0 || x >= 100 || y < 0 || y >= 100) break;
            const double v = s.at(0, y, x);
            CHECK(v <= prev + 1e-12);
            prev = v;
        }
    }
}

TEST_CASE("decode tie-break: smallest y wins, then smallest x") {
    ConfidenceMapStack s;
    s.height = 16;
    s.width = 16;
    s.maps = nn::Tensor<float>({kNumKeypoints, 16, 16});
    // two equal peaks at (x=10, y=5) and (x=5, y=10)
    for (int k = 0; k < kNumKeypoints; ++k) {
        s.maps[(size_t(k) * 16 + 5) * 16 + 10] = 0.5f;
        s.maps[(size_t(k) * 16 + 10) * 16 + 5] = 0.5f;
    }
    // exhaustive-scan oracle: first maximum in row-major order
    {
        float best = -1;
        int bx = -1, by = -1;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const float v = s.maps[(5 * 16 + size_t(y)) * 16 + size_t(x)];
                if (v > best) {
                    best = v;
                    bx = x;
                    by = y;
                }
            }
        CHECK(bx == 10);
        CHECK(by == 5);
    }
    Pose dec = confmap::decode(s);
    CHECK(dec.coords[0].x == 10);
    CHECK(dec.coords[0].y == 5);
}

TEST_CASE("decode of a uniform map gives (0,0) under the tie-break rule") {
    ConfidenceMapStack s;
    s.height = 8;
    s.width = 8;
    s.maps = nn::Tensor<float>({kNumKeypoints, 8, 8});
    s.maps.fill(1.0f / 64.0f);
    Pose dec = confmap::decode(s);
    CHECK(dec.coords[0].x == 0);
    CHECK(dec.coords[0].y == 0);
    CHECK(dec.visible[0]);
}
