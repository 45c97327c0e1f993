#include <doctest.h>

#include <filesystem>
#include <set>

#include "tleap/rng.hpp"
#include "tleap/sample.hpp"
#include "tleap/skeleton.hpp"

using namespace tleap;

TEST_CASE("skeleton has the fixed 17-keypoint taxonomy in order") {
    const Skeleton& sk = skeleton();
    REQUIRE(sk.size() == 17);
    CHECK(sk.name(0) == "LF hoof");
    CHECK(sk.name(1) == "LF fetlock");
    CHECK(sk.name(2) == "LF carpal");
    CHECK(sk.name(3) == "RF hoof");
    CHECK(sk.name(11) == "RH carpal");
    CHECK(sk.name(12) == "Nose");
    CHECK(sk.name(13) == "Forehead");
    CHECK(sk.name(14) == "Withers");
    CHECK(sk.name(15) == "Sacrum");
    CHECK(sk.name(16) == "Caudal thoracic vertebrae");
}

TEST_CASE("groups partition the 17 indices") {
    const Skeleton& sk = skeleton();
    std::set<int> seen;
    size_t total = 0;
    for (int g = 0; g < kNumGroups; ++g) {
        for (int idx : sk.group_members(BodyGroup(g))) {
            CHECK(!seen.count(idx));
            seen.insert(idx);
        }
        total += sk.group_members(BodyGroup(g)).size();
    }
    CHECK(total == 17);
    CHECK(seen.size() == 17);
    // every index belongs to the group that lists it
    for (int g = 0; g < kNumGroups; ++g)
        for (int idx : sk.group_members(BodyGroup(g)))
            CHECK(sk.group_of(idx + 1) == BodyGroup(g));
}

TEST_CASE("group_of matches the Fig-3 numbering") {
    const Skeleton& sk = skeleton();
    CHECK(sk.group_of(13) == BodyGroup::Head);        // Nose
    CHECK(sk.group_of(1) == BodyGroup::Hoof);         // LF hoof
    CHECK(sk.group_of(16) == BodyGroup::Spine);       // Sacrum
    CHECK(sk.group_of(3) == BodyGroup::CarpalTarsal); // LF carpal
    CHECK(sk.group_of(2) == BodyGroup::Fetlock);      // LF fetlock
    CHECK_THROWS_AS(sk.group_of(0), std::out_of_range);
    CHECK_THROWS_AS(sk.group_of(18), std::out_of_range);
}

TEST_CASE("head_length") {
    Pose p;
    p.coords[kForehead] = {0, 0};
    p.coords[kNose] = {50, 0};
    CHECK(head_length(p) == doctest::Approx(50.0));

    p.coords[kForehead] = {3, 4};
    p.coords[kNose] = {0, 0};
    CHECK(head_length(p) == doctest::Approx(5.0));

    p.visible[kNose] = false;
    CHECK_THROWS_AS(head_length(p), std::invalid_argument);
    p.visible[kNose] = true;
    p.visible[kForehead] = false;
    CHECK_THROWS_AS(head_length(p), std::invalid_argument);
}

TEST_CASE("pose visibility follows image bounds") {
    Pose p;
    for (int k = 0; k < kNumKeypoints; ++k) p.coords[size_t(k)] = {10, 10};
    p.coords[0] = {-0.5, 10};
    p.coords[1] = {10, 99.5};
    p.coords[2] = {100, 10};  // == width -> out
    p.clamp_visibility(100, 100);
    CHECK(!p.visible[0]);
    CHECK(p.visible[1]);
    CHECK(!p.visible[2]);
    CHECK(p.visible[3]);
}

TEST_CASE("manifest roundtrip preserves samples and validates files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "tleap_core_test";
    fs::remove_all(dir);
    fs::create_directories(dir / "vid");

    Image img(32, 24);
    write_png(img, (dir / "vid" / "f0.png").string());
    write_png(img, (dir / "vid" / "f1.png").string());

    DatasetManifest m;
    m.dir = dir.string();
    m.frame_width = 32;
    m.frame_height = 24;
    SampleRecord rec;
    rec.video_id = "vid";
    rec.cow_id = "cow00";
    rec.start_frame = 0;
    rec.frame_paths = {"vid/f0.png", "vid/f1.png"};
    Pose pose;
    for (int k = 0; k < kNumKeypoints; ++k)
        pose.coords[size_t(k)] = {double(k), double(k) / 2.0 + 0.25};
    rec.poses = {pose, pose};
    m.samples.push_back(rec);
    save_manifest(m, (dir / "manifest.json").string());

    DatasetManifest loaded = load_manifest((dir / "manifest.json").string());
    REQUIRE(loaded.samples.size() == 1);
    CHECK(loaded.samples[0].cow_id == "cow00");
    CHECK(loaded.samples[0].poses[1].coords[5].x == doctest::Approx(5.0));
    CHECK(loaded.samples[0].poses[1].coords[5].y == doctest::Approx(2.75));

    // a missing frame file must be rejected at load time
    fs::remove(dir / "vid" / "f1.png");
    CHECK_THROWS(load_manifest((dir / "manifest.json").string()));
    fs::remove_all(dir);
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(43);
    CHECK(c.next_u64() != Rng(42).next_u64());
}
