#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <numbers>

#include "tleap/eval.hpp"
#include "tleap/synth.hpp"

using namespace tleap;
using namespace tleap::synth;

TEST_CASE("generate_herd: deterministic, 2:1 coat family ratio") {
    auto herd = generate_herd(30, 77);
    REQUIRE(herd.size() == 30);
    int dark = 0, light = 0;
    for (const CowSpec& c : herd)
        (c.family == CoatFamily::DarkDominant ? dark : light)++;
    CHECK(dark == 20);
    CHECK(light == 10);

    auto again = generate_herd(30, 77);
    for (size_t i = 0; i < herd.size(); ++i) {
        CHECK(again[i].cow_id == herd[i].cow_id);
        CHECK(again[i].body_length == herd[i].body_length);
        CHECK(again[i].walk_speed == herd[i].walk_speed);
        CHECK(again[i].blob_seed == herd[i].blob_seed);
    }
    CHECK(generate_herd(1, 3).size() == 1);
    CHECK_THROWS(generate_herd(0, 3));

    for (const CowSpec& c : herd) {
        CHECK(c.body_length > 0);
        CHECK(c.stride_period >= 4.0);  // windows of 4 frames capture motion
    }
}

TEST_CASE("withers x advances by exactly the walk speed per frame") {
    CowSpec spec = generate_herd(1, 5)[0];
    RenderConfig rc;
    for (int t = 0; t < 20; ++t) {
        const Pose a = pose_at(spec, rc, t);
        const Pose b = pose_at(spec, rc, t + 1);
        CHECK(b.coords[kWithers].x - a.coords[kWithers].x ==
              doctest::Approx(spec.walk_speed).epsilon(1e-12));
    }
}

TEST_CASE("diagonal legs share phase: LF and RH hoof oscillations in phase") {
    CowSpec spec = generate_herd(1, 5)[0];
    spec.leg_phase = {0.0, std::numbers::pi, std::numbers::pi, 0.0};  // diagonal pairs offset by pi
    RenderConfig rc;
    // evaluate the gait formula: residual oscillation after removing the
    // walking translation must match between LF and RH
    for (int t = 0; t < int(2 * spec.stride_period); ++t) {
        const Pose p = pose_at(spec, rc, t);
        const double body_x = (rc.start_x + spec.walk_speed * t);
        const double lf = p.coords[kLFHoof].x - (body_x + 0.30 * spec.body_length);
        const double rh = p.coords[kRHHoof].x - (body_x - 0.32 * spec.body_length);
        CHECK(lf == doctest::Approx(rh).epsilon(1e-9));
        // and the anti-phase pair mirrors
        const double rf = p.coords[kRFHoof].x - (body_x + 0.30 * spec.body_length);
        CHECK(rf == doctest::Approx(-lf).epsilon(1e-9));
    }
}

TEST_CASE("head length of emitted poses is the spec's head length") {
    CowSpec spec = generate_herd(3, 9)[2];
    RenderConfig rc;
    for (int t = 0; t < 10; ++t)
        CHECK(head_length(pose_at(spec, rc, t)) ==
              doctest::Approx(spec.head_length).epsilon(1e-9));
}

TEST_CASE("rendering determinism and label exactness") {
    CowSpec spec = generate_herd(2, 11)[1];
    RenderConfig rc;
    RenderedSequence a = render_sequence(spec, 8, 123, rc);
    RenderedSequence b = render_sequence(spec, 8, 123, rc);
    REQUIRE(a.frames.size() == 8);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t f = 0; f < a.frames.size(); ++f)
        CHECK(a.frames[f].pixels == b.frames[f].pixels);

    // every pose passes the visibility invariant (body fully visible)
    for (const Pose& p : a.poses)
        for (int k = 0; k < kNumKeypoints; ++k) {
            CHECK(p.visible[size_t(k)]);
            CHECK(p.coords[size_t(k)].x >= 0);
            CHECK(p.coords[size_t(k)].x < rc.scene_width);
            CHECK(p.coords[size_t(k)].y >= 0);
            CHECK(p.coords[size_t(k)].y < rc.scene_height);
        }

    // a detector reading the renderer's joints scores PCKh@0 = 100%
    eval::PckhReport r = eval::pckh(a.poses, a.poses, 0.0);
    CHECK(r.overall == 1.0);
}

TEST_CASE("sequences truncate when the figure would leave the scene") {
    CowSpec spec = generate_herd(1, 13)[0];
    RenderConfig rc;
    rc.scene_width = 500;  // too narrow for a long walk
    RenderedSequence seq = render_sequence(spec, 400, 1, rc);
    CHECK(seq.frames.size() < 400);
    CHECK(seq.frames.size() >= 4);
    // the last emitted frame is still fully visible
    for (int k = 0; k < kNumKeypoints; ++k) {
        CHECK(seq.poses.back().coords[size_t(k)].x < rc.scene_width);
    }
}

TEST_CASE("different seeds give different pixels") {
    CowSpec spec = generate_herd(1, 21)[0];
    RenderConfig rc;
    RenderedSequence a = render_sequence(spec, 4, 1, rc);
    RenderedSequence b = render_sequence(spec, 4, 2, rc);
    CHECK(a.frames[0].pixels != b.frames[0].pixels);  // background noise differs
}
