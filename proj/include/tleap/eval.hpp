#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "tleap/sample.hpp"
#include "tleap/skeleton.hpp"

namespace tleap::eval {

/// PCKh scores at one threshold. overall is the instance-weighted mean
/// over keypoint instances (samples x evaluable keypoints); per-group
/// scores weight their member keypoints the same way.
struct PckhReport {
    double theta = 0.0;
    double overall = 0.0;
    std::map<std::string, double> per_group;
    std::array<double, kNumKeypoints> per_keypoint{};
    int64_t n_instances = 0;
    int64_t n_skipped_samples = 0;  // ground truth with invisible head keypoints
};

/// Per-sample per-keypoint correctness for significance testing:
/// 1 correct, 0 incorrect, -1 excluded (sample skipped or keypoint not
/// evaluable in the ground truth).
struct PckhDetail {
    std::vector<std::array<int8_t, kNumKeypoints>> correct;

    /// Mean correctness per evaluated sample (the paired unit used for
    /// significance tests); skipped samples yield no entry.
    std::vector<double> per_sample_scores() const;
};

/// A keypoint is correct iff its Euclidean error is at most theta times
/// the ground-truth head length (boundary inclusive). Samples whose
/// ground truth lacks a visible head are skipped and tallied.
PckhReport pckh(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
                double theta, PckhDetail* detail = nullptr);

struct WilcoxonResult {
    double p_value = 1.0;
    double statistic = 0.0;  // W+ (rank sum of positive differences)
    int n_effective = 0;     // pairs remaining after dropping zero differences
    bool undefined = false;  // all differences zero
    bool exact = false;      // exact conditional distribution vs normal approx
    bool significant_at_05() const { return !undefined && p_value < 0.05; }
};

/// Two-sided Wilcoxon signed-rank test on paired scores. Zero differences
/// are dropped; ties get midranks. Exact distribution for n <= 25 (rank-
/// sum DP, equivalent to enumerating all sign assignments), normal
/// approximation with tie correction above. All-zero differences are
/// reported as undefined with p = 1; otherwise fewer than 5 effective
/// pairs is an error.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b);

struct EvalResult {
    std::map<double, PckhReport> reports;
    std::map<double, PckhDetail> details;
    std::vector<Pose> pred_poses;
    std::vector<Pose> gt_poses;
};

/// Scores already-decoded predictions against ground truth for each theta.
EvalResult evaluate_poses(const std::vector<Pose>& preds,
                          const std::vector<Pose>& gts,
                          const std::vector<double>& thetas);

/// Runs checkpoint inference over a manifest (batched, evaluation mode),
/// decodes keypoints, and scores PCKh for each theta (default {0.2, 0.5}).
EvalResult evaluate_model(const std::string& checkpoint_path,
                          const DatasetManifest& manifest,
                          const std::vector<double>& thetas = {0.2, 0.5},
                          int batch_size = 8);

/// Writes the report JSON (all thetas) plus one per-sample correctness
/// CSV per theta next to it.
void write_report(const EvalResult& result, const std::string& json_path);

}  // namespace tleap::eval
