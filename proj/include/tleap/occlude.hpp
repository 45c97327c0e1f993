#pragma once

#include <array>
#include <string>
#include <vector>

#include "tleap/sample.hpp"

namespace tleap::occlude {

enum class Region { HindLegs, ForeLegs, Head };

Region region_from_string(const std::string& s);
const char* to_string(Region r);

/// The keypoints whose mean x-position anchors a region's bar.
const std::vector<int>& region_keypoints(Region r);

struct Bar {
    double x_center = 0.0;
    int width = 10;
    std::array<uint8_t, 3> color{128, 128, 128};
    std::string region;
};

/// Vertical full-height bars, identical across all frames of all samples
/// of an occlusion variant.
struct OcclusionLayout {
    std::vector<Bar> bars;

    std::string to_json() const;
    static OcclusionLayout from_json(const std::string& text);
};

/// One bar per requested region, centered on the mean x-coordinate of the
/// region's keypoints over all samples and frames of the manifest.
OcclusionLayout compute_layout(const DatasetManifest& manifest,
                               const std::vector<Region>& regions, int bar_width = 10);

/// Columns in [round(x_center) - width/2, round(x_center) + width/2) of
/// every frame are overwritten with the bar color. Poses are untouched:
/// ground truth remains the hidden location.
SequenceSample apply(const SequenceSample& sample, const OcclusionLayout& layout);

/// The integer pixel columns a bar covers in an image of the given width.
std::vector<int> bar_columns(const Bar& bar, int image_width);

/// Applies a layout to every sample of a manifest, writing occluded
/// frames, the variant manifest, and layout.json under out_dir. Returns
/// the new manifest path.
std::string apply_to_dataset(const DatasetManifest& manifest,
                             const OcclusionLayout& layout,
                             const std::string& out_dir);

}  // namespace tleap::occlude
