#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace tleap {

constexpr int kNumKeypoints = 17;

/// Keypoint indices, 0-based, in the fixed taxonomy order. User-facing
/// numbering (manifests, reports, group_of) is 1-based; add/subtract 1 at
/// those boundaries only.
enum Keypoint : int {
    kLFHoof = 0,
    kLFFetlock,
    kLFCarpal,
    kRFHoof,
    kRFFetlock,
    kRFCarpal,
    kLHHoof,
    kLHFetlock,
    kLHCarpal,
    kRHHoof,
    kRHFetlock,
    kRHCarpal,
    kNose,
    kForehead,
    kWithers,
    kSacrum,
    kCaudalThoracic,
};

enum class BodyGroup : int { Head = 0, Spine, CarpalTarsal, Fetlock, Hoof };

constexpr int kNumGroups = 5;

const char* to_string(BodyGroup g);
BodyGroup body_group_from_string(const std::string& s);

/// The fixed 17-landmark taxonomy with its partition into body-part groups.
/// Construction is deterministic; instances are immutable.
class Skeleton {
public:
    Skeleton();

    const std::vector<std::string>& keypoint_names() const { return names_; }
    const std::string& name(int index0) const { return names_.at(size_t(index0)); }

    /// Group of a keypoint by 1-based index (the numbering used in
    /// manifests and reports). Throws std::out_of_range outside [1, 17].
    BodyGroup group_of(int index1) const;

    /// 0-based member indices of a group.
    const std::vector<int>& group_members(BodyGroup g) const {
        return groups_[size_t(g)];
    }

    int size() const { return kNumKeypoints; }

private:
    std::vector<std::string> names_;
    std::array<std::vector<int>, kNumGroups> groups_;
    std::array<BodyGroup, kNumKeypoints> group_of_;
};

/// Shared immutable skeleton instance.
const Skeleton& skeleton();

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Per-frame 2D keypoint coordinates in pixel units of the owning image.
/// A keypoint is visible when it lies inside the image bounds.
struct Pose {
    std::array<Point2, kNumKeypoints> coords{};
    std::array<bool, kNumKeypoints> visible{};

    Pose() { visible.fill(true); }

    /// Marks keypoints outside [0,width) x [0,height) invisible.
    void clamp_visibility(int width, int height);

    bool head_visible() const { return visible[kNose] && visible[kForehead]; }
};

/// Euclidean distance between the Forehead and Nose keypoints. Throws
/// std::invalid_argument if either head keypoint is invisible, which marks
/// the sample unevaluable for head-relative metrics.
double head_length(const Pose& pose);

}  // namespace tleap
