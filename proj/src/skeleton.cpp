#include "tleap/skeleton.hpp"

#include <cmath>
#include <stdexcept>

namespace tleap {

const char* to_string(BodyGroup g) {
    switch (g) {
        case BodyGroup::Head: return "head";
        case BodyGroup::Spine: return "spine";
        case BodyGroup::CarpalTarsal: return "carpal_tarsal";
        case BodyGroup::Fetlock: return "fetlock";
        case BodyGroup::Hoof: return "hoof";
    }
    throw std::invalid_argument("unknown body group");
}

BodyGroup body_group_from_string(const std::string& s) {
    if (s == "head") return BodyGroup::Head;
    if (s == "spine") return BodyGroup::Spine;
    if (s == "carpal_tarsal") return BodyGroup::CarpalTarsal;
    if (s == "fetlock") return BodyGroup::Fetlock;
    if (s == "hoof") return BodyGroup::Hoof;
    throw std::invalid_argument("unknown body group: " + s);
}

Skeleton::Skeleton() {
    names_ = {
        "LF hoof",  "LF fetlock", "LF carpal",
        "RF hoof",  "RF fetlock", "RF carpal",
        "LH hoof",  "LH fetlock", "LH carpal",
        "RH hoof",  "RH fetlock", "RH carpal",
        "Nose",     "Forehead",   "Withers",
        "Sacrum",   "Caudal thoracic vertebrae",
    };
    groups_[size_t(BodyGroup::Head)] = {kNose, kForehead};
    groups_[size_t(BodyGroup::Spine)] = {kWithers, kSacrum, kCaudalThoracic};
    groups_[size_t(BodyGroup::CarpalTarsal)] = {kLFCarpal, kRFCarpal, kLHCarpal, kRHCarpal};
    groups_[size_t(BodyGroup::Fetlock)] = {kLFFetlock, kRFFetlock, kLHFetlock, kRHFetlock};
    groups_[size_t(BodyGroup::Hoof)] = {kLFHoof, kRFHoof, kLHHoof, kRHHoof};
    for (size_t g = 0; g < kNumGroups; ++g)
        for (int idx : groups_[g]) group_of_[size_t(idx)] = BodyGroup(g);
}

BodyGroup Skeleton::group_of(int index1) const {
    if (index1 < 1 || index1 > kNumKeypoints)
        throw std::out_of_range("keypoint index out of range [1,17]: " +
                                std::to_string(index1));
    return group_of_[size_t(index1 - 1)];
}

const Skeleton& skeleton() {
    static const Skeleton s;
    return s;
}

void Pose::clamp_visibility(int width, int height) {
    for (int k = 0; k < kNumKeypoints; ++k) {
        const Point2& p = coords[size_t(k)];
        visible[size_t(k)] = p.x >= 0.0 && p.x < double(width) && p.y >= 0.0 &&
                             p.y < double(height);
    }
}

double head_length(const Pose& pose) {
    if (!pose.visible[kForehead] || !pose.visible[kNose])
        throw std::invalid_argument(
            "head_length: Forehead/Nose invisible, sample not evaluable");
    const double dx = pose.coords[kForehead].x - pose.coords[kNose].x;
    const double dy = pose.coords[kForehead].y - pose.coords[kNose].y;
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace tleap
