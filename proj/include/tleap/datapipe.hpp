#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tleap/rng.hpp"
#include "tleap/sample.hpp"

namespace tleap::datapipe {

/// Per-sample augmentation parameters, each drawn from an independent
/// uniform distribution per sample per epoch.
struct AugmentParams {
    double rotation_deg = 0.0;   // [-10, 10]
    double brightness = 0.0;     // [-100, 100]
    double contrast_gain = 1.0;  // [-3, 3]
};

AugmentParams sample_augment_params(Rng& rng);

/// Seed for the (epoch, sample) augmentation draw, so each epoch sees
/// different parameters while runs stay reproducible.
inline uint64_t augment_seed(uint64_t base_seed, int epoch, size_t sample_index) {
    return mix_seed(base_seed, uint64_t(epoch), uint64_t(sample_index));
}

/// Splits one video's annotated frames into consecutive, non-overlapping
/// windows of `window` frames; the trailing remainder is discarded.
std::vector<SampleRecord> segment(const std::string& video_id,
                                  const std::string& cow_id,
                                  const std::vector<std::string>& frame_paths,
                                  const std::vector<Pose>& poses, int window = 4);

struct CropResult {
    SequenceSample sample;
    int box_x = 0;
    int box_y = 0;
    int box_side = 0;
};

/// Crops a square box around the first frame's keypoint extent: side =
/// x-extent + 2*margin, horizontally centered on the extent midpoint,
/// vertically on the keypoint centroid. The same box is applied to every
/// frame; keypoints are translated into box coordinates. Boxes that
/// exceed the image are shifted back inside; images smaller than the box
/// are padded with edge replication.
CropResult crop(const SequenceSample& sample, int margin = 100);

/// Bilinear resize of a square sample to target x target. Keypoints scale
/// by target / box_side; the factor is recorded in sample metadata.
SequenceSample resize(const SequenceSample& sample, int target,
                      std::map<std::string, double>* meta = nullptr);

/// Rotates frames about the image center and applies v -> clamp(gain*v +
/// brightness). The same transform is applied to every frame and to the
/// keypoints; keypoints leaving the bounds are marked invisible.
SequenceSample augment(const SequenceSample& sample, const AugmentParams& params);

enum class SplitScheme { Cowalk30, Cowalk10 };

SplitScheme split_scheme_from_string(const std::string& s);
const char* to_string(SplitScheme s);

struct SplitSpec {
    SplitScheme scheme = SplitScheme::Cowalk30;
    uint64_t seed = 0;
    /// Optional restriction of the cowalk10 training-cow draw to a cow-id
    /// pool (used to hold out a coat family in the generalization
    /// experiment). Empty = all cows eligible.
    std::vector<std::string> train_cow_pool;
};

struct SplitResult {
    DatasetManifest train;
    DatasetManifest test_known;
    std::optional<DatasetManifest> test_unknown;
    /// cow id -> partition summary for the split.json audit file.
    std::string audit_json;
};

/// cowalk30: 80/20 random sample split. cowalk10: 10 training cows drawn
/// uniformly, each cow's samples split 50/50 (odd counts floor to train),
/// every remaining cow's samples to test_unknown. Deterministic per seed.
SplitResult split(const DatasetManifest& manifest, const SplitSpec& spec);

/// Manifest notes tag for partitions; fit() refuses to augment manifests
/// tagged as test partitions.
bool is_test_partition(const DatasetManifest& m);

/// Crops and resizes every sample of a manifest, writing the prepared
/// frames and manifest under out_dir. Returns the prepared manifest path.
std::string prepare_dataset(const std::string& manifest_path, int margin, int target,
                            const std::string& out_dir);

}  // namespace tleap::datapipe
