#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tleap/image.hpp"
#include "tleap/skeleton.hpp"

namespace tleap {

/// T consecutive frames of one video plus their per-frame poses. The
/// supervised target is always the pose of the last frame.
struct SequenceSample {
    std::vector<Image> frames;
    std::vector<Pose> poses;
    std::string video_id;
    std::string cow_id;
    int start_frame = 0;

    size_t length() const { return frames.size(); }
    const Pose& target_pose() const { return poses.back(); }
};

/// Manifest entry: frame files on disk plus inline pose coordinates.
struct SampleRecord {
    std::string video_id;
    std::string cow_id;
    int start_frame = 0;
    std::vector<std::string> frame_paths;  // relative to the manifest directory
    std::vector<Pose> poses;
};

/// A dataset manifest: sample records, the skeleton taxonomy, and capture
/// metadata (at minimum frame_width / frame_height of the referenced files).
struct DatasetManifest {
    std::vector<SampleRecord> samples;
    int frame_width = 0;
    int frame_height = 0;
    std::string notes;
    std::string dir;  // directory the frame paths are relative to

    std::string frame_abspath(const SampleRecord& rec, size_t frame_idx) const;
};

/// Writes the manifest JSON document. Frame paths are stored relative to
/// the manifest's directory.
void save_manifest(const DatasetManifest& m, const std::string& path);

/// Loads and validates a manifest: the skeleton must equal the fixed
/// taxonomy, every referenced frame file must exist, every sample must
/// carry a cow_id, and keypoint visibility is set from frame bounds.
DatasetManifest load_manifest(const std::string& path);

/// Loads the pixel data of one sample record.
SequenceSample load_sample(const DatasetManifest& m, const SampleRecord& rec);

}  // namespace tleap
