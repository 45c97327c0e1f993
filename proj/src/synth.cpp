#include "tleap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "tleap/datapipe.hpp"
#include "tleap/rng.hpp"
#include "tleap/sample.hpp"

namespace fs = std::filesystem;

namespace tleap::synth {

namespace {

constexpr double kTau = 6.283185307179586;

struct Rgb {
    double r, g, b;
};

Rgb to_rgb(const std::array<uint8_t, 3>& c) {
    return {double(c[0]), double(c[1]), double(c[2])};
}

Rgb scale(const Rgb& c, double f) {
    return {std::clamp(c.r * f, 0.0, 255.0), std::clamp(c.g * f, 0.0, 255.0),
            std::clamp(c.b * f, 0.0, 255.0)};
}

void put(Image& img, int x, int y, const Rgb& c) {
    if (img.in_bounds(x, y))
        img.set(x, y, uint8_t(std::lround(c.r)), uint8_t(std::lround(c.g)),
                uint8_t(std::lround(c.b)));
}

/// Capsule (thick segment) rasterizer.
void draw_segment(Image& img, double x0, double y0, double x1, double y1,
                  double width, const Rgb& color) {
    const double r = width / 2.0;
    const int min_x = int(std::floor(std::min(x0, x1) - r)) - 1;
    const int max_x = int(std::ceil(std::max(x0, x1) + r)) + 1;
    const int min_y = int(std::floor(std::min(y0, y1) - r)) - 1;
    const int max_y = int(std::ceil(std::max(y0, y1) + r)) + 1;
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = min_y; y <= max_y; ++y)
        for (int x = min_x; x <= max_x; ++x) {
            double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double px = x0 + t * dx, py = y0 + t * dy;
            const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
            if (d2 <= r * r) put(img, x, y, color);
        }
}

struct Blob {
    double x, y, r;  // torso-local coordinates
};

struct CoatPattern {
    std::vector<Blob> blobs;

    bool in_blob(double lx, double ly) const {
        for (const Blob& b : blobs) {
            const double dx = lx - b.x, dy = ly - b.y;
            if (dx * dx + dy * dy <= b.r * b.r) return true;
        }
        return false;
    }
};

CoatPattern make_pattern(const CowSpec& spec) {
    CoatPattern p;
    Rng rng(mix_seed(spec.blob_seed, 0xC0A7));
    const int n = int(6 + spec.blob_density * 8);
    for (int i = 0; i < n; ++i) {
        Blob b;
        b.x = rng.uniform(-spec.body_length / 2, spec.body_length / 2);
        b.y = rng.uniform(-spec.body_height / 2, spec.body_height / 2);
        b.r = rng.uniform(9.0, 24.0);
        p.blobs.push_back(b);
    }
    return p;
}

/// Axis-aligned filled ellipse with a per-pixel color callback.
template <typename ColorFn>
void fill_ellipse(Image& img, double cx, double cy, double rx, double ry,
                  ColorFn color) {
    const int min_x = int(std::floor(cx - rx)), max_x = int(std::ceil(cx + rx));
    const int min_y = int(std::floor(cy - ry)), max_y = int(std::ceil(cy + ry));
    for (int y = min_y; y <= max_y; ++y)
        for (int x = min_x; x <= max_x; ++x) {
            const double nx = (x - cx) / rx, ny = (y - cy) / ry;
            if (nx * nx + ny * ny <= 1.0) put(img, x, y, color(x - cx, y - cy));
        }
}

struct JointSet {
    // per leg (LF, RF, LH, RH): carpal, fetlock, hoof
    std::array<Point2, 4> carpal, fetlock, hoof;
    std::array<Point2, 4> anchor;
    Point2 withers, sacrum, caudal, nose, forehead;
    double body_cx, body_cy;
};

JointSet joints_at(const CowSpec& spec, const RenderConfig& rc, int t) {
    JointSet j;
    const double ground = rc.scene_height - 28.0;
    const double l = spec.body_length, h = spec.body_height;
    j.body_cx = rc.start_x + spec.walk_speed * t;
    j.body_cy = ground - spec.leg_length - h / 2.0;

    const double anchor_y = j.body_cy + 0.42 * h;
    const std::array<double, 4> anchor_dx = {0.30 * l, 0.30 * l, -0.32 * l, -0.32 * l};
    const double amp = spec.swing_amplitude();
    const double drop = ground - anchor_y;
    for (int leg = 0; leg < 4; ++leg) {
        const double theta = kTau * double(t) / spec.stride_period +
                             spec.leg_phase[size_t(leg)];
        const double s = std::sin(theta);
        const double lift = std::max(0.0, std::cos(theta));
        const double ax = j.body_cx + anchor_dx[size_t(leg)];
        j.anchor[size_t(leg)] = {ax, anchor_y};
        j.carpal[size_t(leg)] = {ax + 0.38 * amp * s, anchor_y + 0.45 * drop - 1.5 * lift};
        j.fetlock[size_t(leg)] = {ax + 0.72 * amp * s, anchor_y + 0.80 * drop - 5.0 * lift};
        j.hoof[size_t(leg)] = {ax + amp * s, ground - 10.0 * lift};
    }

    const double nod = 2.0 * std::sin(kTau * double(t) / spec.stride_period);
    j.withers = {j.body_cx + 0.28 * l, j.body_cy - 0.52 * h};
    j.sacrum = {j.body_cx - 0.36 * l, j.body_cy - 0.50 * h};
    j.caudal = {j.body_cx - 0.05 * l, j.body_cy - 0.57 * h};
    // rigid head: nose is exactly head_length from the forehead
    j.forehead = {j.body_cx + 0.50 * l + 0.30 * spec.head_length,
                  j.body_cy - 0.92 * h + nod};
    const double ang = 0.42;  // forward-down head pitch, radians
    j.nose = {j.forehead.x + spec.head_length * std::cos(ang),
              j.forehead.y + spec.head_length * std::sin(ang)};
    return j;
}

Pose pose_from_joints(const JointSet& j) {
    Pose p;
    // legs: order LF, RF, LH, RH maps onto the taxonomy's leg triples
    const std::array<int, 4> hoof_idx = {kLFHoof, kRFHoof, kLHHoof, kRHHoof};
    const std::array<int, 4> fet_idx = {kLFFetlock, kRFFetlock, kLHFetlock, kRHFetlock};
    const std::array<int, 4> car_idx = {kLFCarpal, kRFCarpal, kLHCarpal, kRHCarpal};
    for (int leg = 0; leg < 4; ++leg) {
        p.coords[size_t(hoof_idx[size_t(leg)])] = j.hoof[size_t(leg)];
        p.coords[size_t(fet_idx[size_t(leg)])] = j.fetlock[size_t(leg)];
        p.coords[size_t(car_idx[size_t(leg)])] = j.carpal[size_t(leg)];
    }
    p.coords[kNose] = j.nose;
    p.coords[kForehead] = j.forehead;
    p.coords[kWithers] = j.withers;
    p.coords[kSacrum] = j.sacrum;
    p.coords[kCaudalThoracic] = j.caudal;
    return p;
}

Image render_background(const RenderConfig& rc, uint64_t seed) {
    Image bg(rc.scene_width, rc.scene_height);
    // low-frequency value noise over a coarse grid
    const int cell = 48;
    const int gw = rc.scene_width / cell + 2, gh = rc.scene_height / cell + 2;
    std::vector<double> grid(size_t(gw * gh));
    Rng rng(mix_seed(seed, 0xB6));
    for (double& v : grid) v = rng.uniform(-1.0, 1.0);
    const double ground = rc.scene_height - 28.0;
    for (int y = 0; y < rc.scene_height; ++y)
        for (int x = 0; x < rc.scene_width; ++x) {
            const double gx = double(x) / cell, gy = double(y) / cell;
            const int ix = int(gx), iy = int(gy);
            const double fx = gx - ix, fy = gy - iy;
            const double n =
                (1 - fy) * ((1 - fx) * grid[size_t(iy * gw + ix)] +
                            fx * grid[size_t(iy * gw + ix + 1)]) +
                fy * ((1 - fx) * grid[size_t((iy + 1) * gw + ix)] +
                      fx * grid[size_t((iy + 1) * gw + ix + 1)]);
            Rgb c = y > ground - 4 ? Rgb{118, 104, 82} : Rgb{106, 126, 96};
            c.r += 22 * n;
            c.g += 22 * n;
            c.b += 18 * n;
            put(bg, x, y, c);
        }
    // fence: horizontal rails and posts, behind the cow
    const Rgb wood{122, 96, 70};
    for (double rail_y : {ground - 96.0, ground - 54.0}) {
        for (int y = int(rail_y); y < int(rail_y) + 4; ++y)
            for (int x = 0; x < rc.scene_width; ++x) put(bg, x, y, wood);
    }
    for (int px = 40; px < rc.scene_width; px += 160)
        for (int x = px; x < px + 4; ++x)
            for (int y = int(ground) - 110; y < int(ground); ++y) put(bg, x, y, wood);
    return bg;
}

void draw_cow(Image& img, const CowSpec& spec, const CoatPattern& pattern,
              const JointSet& j) {
    const Rgb base = to_rgb(spec.base_color);
    const Rgb blob = to_rgb(spec.blob_color);
    const Rgb near_leg = scale(base, spec.family == CoatFamily::DarkDominant ? 1.45 : 1.08);
    const Rgb far_leg = scale(base, 0.55);
    const Rgb hoof_cap{28, 24, 22};
    const double leg_w = 9.0;

    auto leg = [&](int idx, const Rgb& color) {
        draw_segment(img, j.anchor[size_t(idx)].x, j.anchor[size_t(idx)].y,
                     j.carpal[size_t(idx)].x, j.carpal[size_t(idx)].y, leg_w, color);
        draw_segment(img, j.carpal[size_t(idx)].x, j.carpal[size_t(idx)].y,
                     j.fetlock[size_t(idx)].x, j.fetlock[size_t(idx)].y, leg_w * 0.85,
                     color);
        draw_segment(img, j.fetlock[size_t(idx)].x, j.fetlock[size_t(idx)].y,
                     j.hoof[size_t(idx)].x, j.hoof[size_t(idx)].y, leg_w * 0.75, color);
        draw_segment(img, j.hoof[size_t(idx)].x, j.hoof[size_t(idx)].y - 1,
                     j.hoof[size_t(idx)].x, j.hoof[size_t(idx)].y + 2, leg_w * 0.8,
                     hoof_cap);
    };

    // far-side legs (right), then body, then near-side legs (left)
    leg(1, far_leg);
    leg(3, far_leg);

    fill_ellipse(img, j.body_cx, j.body_cy, spec.body_length / 2, spec.body_height / 2,
                 [&](double lx, double ly) { return pattern.in_blob(lx, ly) ? blob : base; });

    // neck quad approximated by thick segments from shoulder to head
    const double neck_x = j.body_cx + 0.40 * spec.body_length;
    const double neck_y = j.body_cy - 0.25 * spec.body_height;
    draw_segment(img, neck_x, neck_y, j.forehead.x, j.forehead.y + 6.0, 18.0, base);

    // head ellipse along the forehead->nose axis
    const double hx = (j.forehead.x + j.nose.x) / 2.0;
    const double hy = (j.forehead.y + j.nose.y) / 2.0;
    draw_segment(img, j.forehead.x, j.forehead.y, j.nose.x, j.nose.y,
                 spec.head_length * 0.52, base);
    fill_ellipse(img, hx, hy, spec.head_length * 0.30, spec.head_length * 0.26,
                 [&](double, double) { return scale(base, 1.12); });

    leg(0, near_leg);
    leg(2, near_leg);
}

bool fully_visible(const Pose& p, const RenderConfig& rc, double margin) {
    for (int k = 0; k < kNumKeypoints; ++k) {
        const Point2& c = p.coords[size_t(k)];
        if (c.x < margin || c.x >= rc.scene_width - margin || c.y < margin ||
            c.y >= rc.scene_height - margin)
            return false;
    }
    return true;
}

}  // namespace

std::vector<CowSpec> generate_herd(int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_herd: n must be >= 1");
    std::vector<CowSpec> herd;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, uint64_t(i) + 1));
        CowSpec c;
        char id[16];
        std::snprintf(id, sizeof(id), "cow%02d", i);
        c.cow_id = id;
        // 2:1 family ratio; for n=30 that is 20 dark-dominant, 10 light
        c.family = (i % 3 < 2) ? CoatFamily::DarkDominant : CoatFamily::LightDominant;
        c.body_length = rng.uniform(126.0, 148.0);
        c.body_height = rng.uniform(52.0, 62.0);
        c.leg_length = rng.uniform(68.0, 78.0);
        c.head_length = rng.uniform(48.0, 58.0);
        if (c.family == CoatFamily::DarkDominant) {
            const double v = rng.uniform(34.0, 64.0);
            const double warm = rng.uniform(0.0, 26.0);  // black to red-brown
            c.base_color = {uint8_t(v + warm), uint8_t(v + warm * 0.35), uint8_t(v)};
            c.blob_color = {uint8_t(rng.uniform(198.0, 232.0)),
                            uint8_t(rng.uniform(196.0, 228.0)),
                            uint8_t(rng.uniform(192.0, 224.0))};
        } else {
            const double v = rng.uniform(188.0, 222.0);
            c.base_color = {uint8_t(v), uint8_t(v - rng.uniform(0.0, 10.0)),
                            uint8_t(v - rng.uniform(4.0, 16.0))};
            const double d = rng.uniform(34.0, 66.0);
            const double warm = rng.uniform(0.0, 26.0);
            c.blob_color = {uint8_t(d + warm), uint8_t(d + warm * 0.35), uint8_t(d)};
        }
        c.blob_seed = mix_seed(seed, uint64_t(i), 0xB10B);
        c.blob_density = rng.uniform(0.7, 1.6);
        c.stride_period = std::floor(rng.uniform(14.0, 20.0));
        c.stride_length = rng.uniform(30.0, 38.0);
        c.walk_speed = rng.uniform(6.0, 7.5);
        herd.push_back(std::move(c));
    }
    return herd;
}

Pose pose_at(const CowSpec& spec, const RenderConfig& rc, int t) {
    return pose_from_joints(joints_at(spec, rc, t));
}

RenderedSequence render_sequence(const CowSpec& spec, int n_frames, uint64_t seed,
                                 const RenderConfig& rc) {
    if (n_frames < 4)
        throw std::invalid_argument("render_sequence: need at least 4 frames");
    const CoatPattern pattern = make_pattern(spec);
    const Image bg = render_background(rc, mix_seed(seed, fnv1a(spec.cow_id)));

    RenderedSequence out;
    for (int t = 0; t < n_frames; ++t) {
        const JointSet j = joints_at(spec, rc, t);
        Pose pose = pose_from_joints(j);
        if (!fully_visible(pose, rc, 4.0)) break;  // truncate at the last visible frame
        Image frame = bg;
        draw_cow(frame, spec, pattern, j);
        out.frames.push_back(std::move(frame));
        out.poses.push_back(pose);
    }
    return out;
}

std::string generate_dataset(int n_cows, int frames_per_cow, uint64_t seed,
                             const std::string& out_dir, const RenderConfig& rc) {
    const std::vector<CowSpec> herd = generate_herd(n_cows, seed);
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.dir = out_dir;
    manifest.frame_width = rc.scene_width;
    manifest.frame_height = rc.scene_height;
    manifest.notes = "synthetic";

    for (const CowSpec& spec : herd) {
        RenderedSequence seq = render_sequence(spec, frames_per_cow, seed, rc);
        const std::string video_id = "video_" + spec.cow_id;
        fs::create_directories(fs::path(out_dir) / video_id);
        std::vector<std::string> paths;
        for (size_t t = 0; t < seq.frames.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "f%05zu.png", t);
            const std::string rel = (fs::path(video_id) / name).string();
            write_png(seq.frames[t], (fs::path(out_dir) / rel).string());
            paths.push_back(rel);
        }
        auto records = datapipe::segment(video_id, spec.cow_id, paths, seq.poses);
        for (auto& rec : records) manifest.samples.push_back(std::move(rec));
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    save_manifest(manifest, manifest_path);
    return manifest_path;
}

}  // namespace tleap::synth
