#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tleap/datapipe.hpp"
#include "tleap/net.hpp"
#include "tleap/sample.hpp"

namespace tleap::train {

struct TrainConfig {
    int batch_size = 8;
    double initial_lr = 0.001;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 10;  // epochs
    int epochs = 50;
    // AMSGrad moment parameters, standard defaults
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;
    double sigma = 5.0;     // confidence-map width, pixels
    bool augment = true;    // per-epoch training augmentation

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json_text(const std::string& text);
};

/// Stepwise-decayed learning rate: initial_lr * factor^floor(epoch / every).
double lr_at(const TrainConfig& config, int epoch);

/// Mean squared error over batch x maps x pixels, with the maps of
/// invisible keypoints excluded from both the sum and the denominator.
/// visible is [B x 17]; grad (same shape as pred) is optional.
double mse_loss(const nn::Tensor<float>& pred, const nn::Tensor<float>& target,
                const std::vector<std::vector<bool>>& visible,
                nn::Tensor<float>* grad = nullptr);

/// AMSGrad: Adam moments plus a running elementwise maximum of the second
/// moment, which makes the effective per-parameter step size non-increasing.
class AmsGrad {
public:
    AmsGrad(std::vector<nn::ParamTensor<float>*> params, double beta1, double beta2,
            double eps);

    void step(double lr);

    /// Instrumentation hook: the v-hat accumulator per parameter tensor
    /// (monotonically non-decreasing across steps).
    const std::vector<std::vector<float>>& v_hat() const { return vhat_; }
    int64_t steps() const { return t_; }

private:
    std::vector<nn::ParamTensor<float>*> params_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_, vhat_;
};

/// Batch of training-ready samples converted to network input and
/// confidence-map targets.
struct Batch {
    nn::Tensor<float> input;   // [B, 3, T, H, W], pixel values scaled to [0,1]
    nn::Tensor<float> target;  // [B, 17, 1, H, W]
    std::vector<std::vector<bool>> visible;
    std::vector<Pose> gt_poses;  // last-frame poses
};

/// Packs samples (their last seq_len frames) into a batch; encodes the
/// last frame's pose as the confidence-map target.
Batch pack_batch(const std::vector<const SequenceSample*>& samples, int seq_len,
                 double sigma);

/// One optimizer update on a prepared batch. Returns the loss; optionally
/// hands out the (pre-update) predicted maps.
double train_step(nn::Network<float>& net, const Batch& batch, AmsGrad& opt,
                  double lr, nn::Tensor<float>* pred_out = nullptr);

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    double train_pckh02 = 0.0;
};

struct FitResult {
    std::vector<EpochStats> history;
    std::string final_checkpoint;
    std::string best_checkpoint;
};

/// Full training run: epochs x batches of forward/backward/AMSGrad with
/// per-epoch reshuffling and augmentation, history logging, and final +
/// best-loss checkpoints under out_dir. Deterministic for a fixed seed.
/// Throws if the manifest is a test partition (test data is never
/// augmented) or if the loss becomes non-finite (after writing a
/// diagnostic state dump).
FitResult fit(nn::Network<float>& net, const DatasetManifest& train_manifest,
              const TrainConfig& config, const std::string& out_dir);

}  // namespace tleap::train
