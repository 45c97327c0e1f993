#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tleap/image.hpp"
#include "tleap/skeleton.hpp"

namespace tleap::synth {

enum class CoatFamily { DarkDominant, LightDominant };

/// Procedural description of one synthetic cow: body geometry, coat
/// pattern, and sinusoidal gait parameters.
struct CowSpec {
    std::string cow_id;
    CoatFamily family = CoatFamily::DarkDominant;

    // body dimensions, scene pixels
    double body_length = 140.0;
    double body_height = 58.0;
    double leg_length = 74.0;
    double head_length = 54.0;

    // coat
    std::array<uint8_t, 3> base_color{50, 45, 42};
    std::array<uint8_t, 3> blob_color{215, 210, 205};
    uint64_t blob_seed = 0;
    double blob_density = 1.0;

    // gait: stride_length = peak-to-peak hoof travel relative to the body
    double stride_period = 16.0;  // frames; >= 4 so windows capture motion
    double stride_length = 34.0;  // pixels
    // phase per leg, order LF, RF, LH, RH; diagonal pairs share phase by
    // default (walking trot)
    std::array<double, 4> leg_phase{0.0, std::numbers::pi, std::numbers::pi, 0.0};
    double walk_speed = 7.0;  // pixels/frame

    double swing_amplitude() const { return stride_length / 2.0; }
};

/// Deterministic herd: coat patterns drawn from the dark-dominant and
/// light-dominant families at a 2:1 ratio (20/10 for n=30).
std::vector<CowSpec> generate_herd(int n, uint64_t seed);

struct RenderConfig {
    int scene_width = 1312;
    int scene_height = 384;
    double start_x = 96.0;  // initial torso-center x offset
};

struct RenderedSequence {
    std::vector<Image> frames;
    std::vector<Pose> poses;
};

/// Exact keypoint positions used by the renderer for frame t. These are
/// the emitted labels (zero label noise).
Pose pose_at(const CowSpec& spec, const RenderConfig& rc, int t);

/// Renders a lateral-view articulated figure walking left to right over a
/// textured background with fence lines. Truncates at the last frame in
/// which the full body is inside the scene bounds.
RenderedSequence render_sequence(const CowSpec& spec, int n_frames, uint64_t seed,
                                 const RenderConfig& rc = {});

/// Renders a herd to frame files plus a core-format manifest (windows of
/// 4 consecutive frames, no overlap). Returns the manifest path.
std::string generate_dataset(int n_cows, int frames_per_cow, uint64_t seed,
                             const std::string& out_dir,
                             const RenderConfig& rc = {});

}  // namespace tleap::synth
