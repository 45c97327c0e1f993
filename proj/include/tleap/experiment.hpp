#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tleap/net.hpp"
#include "tleap/train.hpp"

namespace tleap::experiment {

/// Desk-scale experiment recipe. The defaults keep a full experiment
/// within a CPU budget: a 30-cow synthetic herd at 200x200 with reduced
/// base channels; the full-scale settings (base 64, 50 epochs) remain
/// reachable through these fields.
struct ExperimentConfig {
    std::string experiment;  // occlusion | generalization | depth
    int cows = 30;
    int frames_per_cow = 140;  // ~35 samples per cow after 4-frame windows
    int epochs = 20;
    std::vector<uint64_t> seeds = {1, 2, 3};
    int base_channels = 8;
    std::vector<int> temporal_windows = {1, 2, 4};  // occlusion experiment variants
    uint64_t data_seed = 424242;
    int jobs = 1;  // concurrent training workers (subprocesses when > 1)
    std::string out_dir;
    std::string workspace;  // shared data/checkpoint cache; default <out_dir>/workspace
    std::string tleap_bin;  // binary for subprocess workers when jobs > 1

    std::string to_json() const;
    static ExperimentConfig from_json_text(const std::string& text);
};

/// Prepared dataset paths for one split seed.
struct SplitPaths {
    std::string train;
    std::string test_known;
    std::string test_unknown;  // cowalk10 only
};

/// Workspace helper: generates, prepares, splits, and occludes datasets
/// on demand, and caches/reuses training runs keyed by their configs.
class Workspace {
public:
    Workspace(const ExperimentConfig& config);

    const std::string& root() const { return root_; }

    /// Synthesizes + crops/resizes the shared herd dataset (cached).
    std::string prepared_manifest();

    SplitPaths split(const std::string& scheme, uint64_t seed,
                     const std::vector<std::string>& train_pool = {});

    /// Occluded variant of a test manifest; regions name like
    /// "fore_hind_head". Returns the variant manifest path (cached).
    std::string occluded_variant(const std::string& test_manifest,
                                 const std::string& variant_tag,
                                 const std::vector<std::string>& regions);

    /// Cow ids of the dark-dominant coat family in the shared herd.
    std::vector<std::string> dark_family_cows() const;

    struct TrainJob {
        nn::ModelConfig model;
        train::TrainConfig config;
        std::string train_manifest;
        std::string run_dir;   // filled by make_job
        std::string tag;
    };

    TrainJob make_job(const nn::ModelConfig& model, uint64_t seed,
                      const std::string& split_tag, const std::string& manifest);

    /// Runs jobs with the configured worker count, skipping jobs whose
    /// run directory already holds a checkpoint for the same configs.
    void run_jobs(std::vector<TrainJob> jobs);

private:
    ExperimentConfig cfg_;
    std::string root_;
};

/// Model config helper for the experiment variants.
nn::ModelConfig make_model(int seq_len, bool deeper, int base_channels);

/// Experiment 1 analog: LEAP vs T-LEAP across occlusion variants.
/// Emits results.json/results.csv shaped models x conditions with
/// per-seed values, means, and pairwise Wilcoxon p-values.
void experiment_occlusion(const ExperimentConfig& config);

/// Experiment 2 analog: T-LEAP(T=2) generalization to unknown cows with a
/// held-out coat family; per-group reports and the generalization gap.
void experiment_generalization(const ExperimentConfig& config);

/// Experiment 3 analog: original vs deeper depth on the occlusion and
/// generalization conditions.
void experiment_depth(const ExperimentConfig& config);

void run_experiment(const ExperimentConfig& config);

}  // namespace tleap::experiment
