#include "tleap/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "tleap/confmap.hpp"
#include "tleap/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap::train {

void TrainConfig::validate() const {
    if (batch_size < 1 || epochs < 1 || lr_decay_every < 1)
        throw std::invalid_argument("TrainConfig: counts must be >= 1");
    if (initial_lr <= 0 || lr_decay_factor <= 0 || sigma <= 0 || eps <= 0)
        throw std::invalid_argument("TrainConfig: rates must be positive");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
        throw std::invalid_argument("TrainConfig: betas must lie in (0,1)");
}

std::string TrainConfig::to_json() const {
    json j{{"batch_size", batch_size},
           {"initial_lr", initial_lr},
           {"lr_decay_factor", lr_decay_factor},
           {"lr_decay_every", lr_decay_every},
           {"epochs", epochs},
           {"beta1", beta1},
           {"beta2", beta2},
           {"eps", eps},
           {"seed", seed},
           {"sigma", sigma},
           {"augment", augment}};
    return j.dump(1);
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    c.sigma = j.value("sigma", c.sigma);
    c.augment = j.value("augment", c.augment);
    c.validate();
    return c;
}

double lr_at(const TrainConfig& config, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    return config.initial_lr *
           std::pow(config.lr_decay_factor, double(epoch / config.lr_decay_every));
}

double mse_loss(const nn::Tensor<float>& pred, const nn::Tensor<float>& target,
                const std::vector<std::vector<bool>>& visible,
                nn::Tensor<float>* grad) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("mse_loss: shape mismatch " + pred.shape_str() +
                                    " vs " + target.shape_str());
    const int64_t b = pred.dim(0);
    const int64_t k = pred.dim(1);
    const int64_t plane = pred.numel() / (b * k);
    if (int64_t(visible.size()) != b)
        throw std::invalid_argument("mse_loss: visibility batch size mismatch");

    int64_t visible_maps = 0;
    for (const auto& v : visible) {
        if (int64_t(v.size()) != k)
            throw std::invalid_argument("mse_loss: visibility keypoint count mismatch");
        for (bool vis : v) visible_maps += vis ? 1 : 0;
    }
    if (grad) {
        if (!grad->same_shape(pred)) *grad = nn::Tensor<float>(pred.shape());
        grad->zero();
    }
    if (visible_maps == 0) return 0.0;

    const double denom = double(visible_maps) * double(plane);
    double sum = 0.0;
    for (int64_t s = 0; s < b; ++s)
        for (int64_t c = 0; c < k; ++c) {
            if (!visible[size_t(s)][size_t(c)]) continue;
            const float* p = pred.data() + (s * k + c) * plane;
            const float* t = target.data() + (s * k + c) * plane;
            float* g = grad ? grad->data() + (s * k + c) * plane : nullptr;
            for (int64_t i = 0; i < plane; ++i) {
                const double d = double(p[i]) - double(t[i]);
                sum += d * d;
                if (g) g[i] = float(2.0 * d / denom);
            }
        }
    return sum / denom;
}

AmsGrad::AmsGrad(std::vector<nn::ParamTensor<float>*> params, double beta1,
                 double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.emplace_back(size_t(p->value.numel()), 0.0f);
        v_.emplace_back(size_t(p->value.numel()), 0.0f);
        vhat_.emplace_back(size_t(p->value.numel()), 0.0f);
    }
}

void AmsGrad::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    const double step_size = lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    for (size_t i = 0; i < params_.size(); ++i) {
        nn::ParamTensor<float>& p = *params_[i];
        float* m = m_[i].data();
        float* v = v_[i].data();
        float* vh = vhat_[i].data();
        const float* g = p.grad.data();
        float* w = p.value.data();
        const int64_t n = p.value.numel();
        for (int64_t e = 0; e < n; ++e) {
            m[e] = float(beta1_ * m[e] + (1.0 - beta1_) * g[e]);
            v[e] = float(beta2_ * v[e] + (1.0 - beta2_) * double(g[e]) * double(g[e]));
            vh[e] = std::max(vh[e], v[e]);
            const double denom = std::sqrt(double(vh[e])) * inv_sqrt_bc2 + eps_;
            w[e] -= float(step_size * double(m[e]) / denom);
        }
    }
}

Batch pack_batch(const std::vector<const SequenceSample*>& samples, int seq_len,
                 double sigma) {
    if (samples.empty()) throw std::invalid_argument("pack_batch: empty batch");
    const int64_t b = int64_t(samples.size());
    const Image& f0 = samples[0]->frames.front();
    const int h = f0.height, w = f0.width;

    Batch batch;
    batch.input = nn::Tensor<float>({b, 3, seq_len, h, w});
    batch.target = nn::Tensor<float>({b, kNumKeypoints, 1, h, w});

    constexpr float kInv255 = 1.0f / 255.0f;
    for (int64_t s = 0; s < b; ++s) {
        const SequenceSample& sample = *samples[size_t(s)];
        if (int(sample.frames.size()) < seq_len)
            throw std::invalid_argument("pack_batch: sample shorter than model T");
        const size_t first = sample.frames.size() - size_t(seq_len);
        for (int t = 0; t < seq_len; ++t) {
            const Image& img = sample.frames[first + size_t(t)];
            if (img.height != h || img.width != w)
                throw std::invalid_argument("pack_batch: frame size mismatch");
            for (int c = 0; c < 3; ++c) {
                float* dst = batch.input.data() +
                             (((s * 3 + c) * seq_len + t) * h) * int64_t(w);
                const uint8_t* src = img.pixels.data();
                for (int64_t i = 0; i < int64_t(h) * w; ++i)
                    dst[i] = float(src[i * 3 + c]) * kInv255;
            }
        }
        const Pose& gt = sample.poses.back();
        confmap::ConfidenceMapStack maps = confmap::encode(gt, h, w, sigma);
        std::copy_n(maps.maps.data(), maps.maps.numel(),
                    batch.target.data() + s * kNumKeypoints * int64_t(h) * w);
        std::vector<bool> vis(kNumKeypoints);
        for (int k = 0; k < kNumKeypoints; ++k) vis[size_t(k)] = gt.visible[size_t(k)];
        batch.visible.push_back(std::move(vis));
        batch.gt_poses.push_back(gt);
    }
    return batch;
}

double train_step(nn::Network<float>& net, const Batch& batch, AmsGrad& opt,
                  double lr, nn::Tensor<float>* pred_out) {
    nn::Tensor<float> pred = net.forward(batch.input, true);
    nn::Tensor<float> grad;
    double loss = mse_loss(pred, batch.target, batch.visible, &grad);
    // Confidence maps are distributions over H*W cells, so raw map values
    // (and with them the MSE gradients) scale like 1/(H*W). At 200x200
    // that puts gradients around 1e-12, far below AMSGrad's eps, and the
    // optimizer cannot move. Training therefore measures maps in per-cell
    // density units (values x H*W), a constant (H*W)^2 factor on the MSE
    // that leaves its minimizer and every reported metric unchanged.
    const double s2 = double(pred.dim(3) * pred.dim(4)) * double(pred.dim(3) * pred.dim(4));
    loss *= s2;
    for (int64_t i = 0; i < grad.numel(); ++i) grad[size_t(i)] *= float(s2);
    net.zero_grads();
    net.backward(grad);
    opt.step(lr);
    if (pred_out) *pred_out = std::move(pred);
    return loss;
}

namespace {

/// In-memory training cache: only the last seq_len frames of each sample
/// are kept (that is all the model consumes).
struct CachedSample {
    SequenceSample sample;
};

std::vector<CachedSample> load_cache(const DatasetManifest& m, int seq_len) {
    std::vector<CachedSample> cache;
    cache.reserve(m.samples.size());
    for (const SampleRecord& rec : m.samples) {
        if (int(rec.frame_paths.size()) < seq_len)
            throw std::invalid_argument(
                "fit: manifest sample has fewer frames than the model's T");
        SequenceSample s;
        s.video_id = rec.video_id;
        s.cow_id = rec.cow_id;
        s.start_frame = rec.start_frame;
        const size_t first = rec.frame_paths.size() - size_t(seq_len);
        for (size_t f = first; f < rec.frame_paths.size(); ++f) {
            s.frames.push_back(read_png(m.frame_abspath(rec, f)));
            s.poses.push_back(rec.poses[f]);
        }
        cache.push_back({std::move(s)});
    }
    return cache;
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& rows) {
    std::ofstream out(path);
    out << "epoch,loss,lr,train_pckh02\n";
    for (const EpochStats& r : rows)
        out << r.epoch << "," << r.mean_loss << "," << r.lr << "," << r.train_pckh02
            << "\n";
}

}  // namespace

FitResult fit(nn::Network<float>& net, const DatasetManifest& train_manifest,
              const TrainConfig& config, const std::string& out_dir) {
    config.validate();
    if (config.augment && datapipe::is_test_partition(train_manifest))
        throw std::invalid_argument(
            "fit: refusing to train with augmentation on a test partition");

    const int seq_len = net.config().seq_len;
    std::vector<CachedSample> cache = load_cache(train_manifest, seq_len);
    if (cache.empty()) throw std::invalid_argument("fit: empty training manifest");

    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "train_config.json") << config.to_json() << "\n";
    std::ofstream(fs::path(out_dir) / "model_config.json")
        << net.config().canonical_json() << "\n";

    AmsGrad opt(net.trainable_params(), config.beta1, config.beta2, config.eps);
    FitResult result;
    result.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
    result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    double best_loss = std::numeric_limits<double>::infinity();

    std::vector<size_t> order(cache.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config, epoch);
        Rng shuffle_rng(mix_seed(config.seed, uint64_t(epoch), 0x5affe));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t n_batches = 0;
        std::vector<Pose> epoch_preds, epoch_gts;

        for (size_t pos = 0; pos < order.size(); pos += size_t(config.batch_size)) {
            const size_t end = std::min(order.size(), pos + size_t(config.batch_size));
            std::vector<SequenceSample> augmented;
            std::vector<const SequenceSample*> ptrs;
            for (size_t i = pos; i < end; ++i) {
                const size_t idx = order[i];
                if (config.augment) {
                    Rng arng(datapipe::augment_seed(config.seed, epoch, idx));
                    augmented.push_back(datapipe::augment(
                        cache[idx].sample, datapipe::sample_augment_params(arng)));
                } else {
                    augmented.push_back(cache[idx].sample);
                }
            }
            for (const SequenceSample& s : augmented) ptrs.push_back(&s);

            Batch batch = pack_batch(ptrs, seq_len, config.sigma);
            nn::Tensor<float> pred;
            const double loss = train_step(net, batch, opt, lr, &pred);
            if (!std::isfinite(loss)) {
                json dump{{"epoch", epoch},
                          {"batch_start", pos},
                          {"lr", lr},
                          {"loss", "non-finite"},
                          {"updates", opt.steps()}};
                std::ofstream(fs::path(out_dir) / "diagnostic.json") << dump.dump(1);
                throw std::runtime_error(
                    "fit: non-finite loss at epoch " + std::to_string(epoch) +
                    " (state dump in " + out_dir + "/diagnostic.json)");
            }
            loss_sum += loss;
            ++n_batches;

            // training-side PCKh from the predictions already computed
            const int64_t plane = int64_t(batch.input.dim(3)) * batch.input.dim(4);
            for (int64_t s = 0; s < int64_t(ptrs.size()); ++s) {
                confmap::ConfidenceMapStack stack;
                stack.height = int(batch.input.dim(3));
                stack.width = int(batch.input.dim(4));
                stack.maps = nn::Tensor<float>(
                    {kNumKeypoints, stack.height, stack.width});
                std::copy_n(pred.data() + s * kNumKeypoints * plane,
                            kNumKeypoints * plane, stack.maps.data());
                epoch_preds.push_back(confmap::decode(stack));
                epoch_gts.push_back(batch.gt_poses[size_t(s)]);
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.mean_loss = loss_sum / double(n_batches);
        stats.train_pckh02 = eval::pckh(epoch_preds, epoch_gts, 0.2).overall;
        result.history.push_back(stats);
        write_history_csv((fs::path(out_dir) / "history.csv").string(), result.history);

        if (stats.mean_loss < best_loss) {
            best_loss = stats.mean_loss;
            nn::save_checkpoint(result.best_checkpoint, net);
        }
    }
    nn::save_checkpoint(result.final_checkpoint, net);
    return result;
}

}  // namespace tleap::train
