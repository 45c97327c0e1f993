#include "tleap/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap::datapipe {

AugmentParams sample_augment_params(Rng& rng) {
    AugmentParams p;
    p.rotation_deg = rng.uniform(-10.0, 10.0);
    p.brightness = rng.uniform(-100.0, 100.0);
    p.contrast_gain = rng.uniform(-3.0, 3.0);
    return p;
}

std::vector<SampleRecord> segment(const std::string& video_id,
                                  const std::string& cow_id,
                                  const std::vector<std::string>& frame_paths,
                                  const std::vector<Pose>& poses, int window) {
    if (frame_paths.size() != poses.size())
        throw std::invalid_argument("segment: frames/poses length mismatch");
    if (window <= 0) throw std::invalid_argument("segment: window must be positive");
    std::vector<SampleRecord> out;
    const size_t n = frame_paths.size() / size_t(window);  // remainder discarded
    for (size_t s = 0; s < n; ++s) {
        SampleRecord rec;
        rec.video_id = video_id;
        rec.cow_id = cow_id;
        rec.start_frame = int(s) * window;
        for (int f = 0; f < window; ++f) {
            rec.frame_paths.push_back(frame_paths[s * size_t(window) + size_t(f)]);
            rec.poses.push_back(poses[s * size_t(window) + size_t(f)]);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

CropResult crop(const SequenceSample& sample, int margin) {
    if (sample.frames.empty()) throw std::invalid_argument("crop: empty sample");
    const Pose& first = sample.poses.front();
    for (int k = 0; k < kNumKeypoints; ++k)
        if (!first.visible[size_t(k)])
            throw std::invalid_argument("crop: first-frame pose not fully visible");

    double min_x = first.coords[0].x, max_x = first.coords[0].x;
    double sum_y = 0.0;
    for (int k = 0; k < kNumKeypoints; ++k) {
        min_x = std::min(min_x, first.coords[size_t(k)].x);
        max_x = std::max(max_x, first.coords[size_t(k)].x);
        sum_y += first.coords[size_t(k)].y;
    }
    const double extent = max_x - min_x;
    if (extent <= 0.0) throw std::invalid_argument("crop: degenerate pose extent");

    const int side = int(std::ceil(extent)) + 2 * margin;
    const double center_x = (min_x + max_x) / 2.0;
    const double center_y = sum_y / kNumKeypoints;
    int ox = int(std::lround(center_x - side / 2.0));
    int oy = int(std::lround(center_y - side / 2.0));

    const Image& f0 = sample.frames.front();
    // Shift the box inside the image where possible; edge-replicate where
    // the image is smaller than the box.
    if (f0.width >= side)
        ox = std::clamp(ox, 0, f0.width - side);
    else
        ox = (f0.width - side) / 2;
    if (f0.height >= side)
        oy = std::clamp(oy, 0, f0.height - side);
    else
        oy = (f0.height - side) / 2;

    CropResult result;
    result.box_x = ox;
    result.box_y = oy;
    result.box_side = side;
    SequenceSample& out = result.sample;
    out.video_id = sample.video_id;
    out.cow_id = sample.cow_id;
    out.start_frame = sample.start_frame;

    for (size_t f = 0; f < sample.frames.size(); ++f) {
        const Image& src = sample.frames[f];
        Image dst(side, side);
        for (int y = 0; y < side; ++y) {
            const int sy = std::clamp(oy + y, 0, src.height - 1);
            for (int x = 0; x < side; ++x) {
                const int sx = std::clamp(ox + x, 0, src.width - 1);
                const uint8_t* p = src.px(sx, sy);
                dst.set(x, y, p[0], p[1], p[2]);
            }
        }
        out.frames.push_back(std::move(dst));

        Pose pose = sample.poses[f];
        for (int k = 0; k < kNumKeypoints; ++k) {
            pose.coords[size_t(k)].x -= ox;
            pose.coords[size_t(k)].y -= oy;
        }
        pose.clamp_visibility(side, side);
        out.poses.push_back(pose);
    }
    return result;
}

SequenceSample resize(const SequenceSample& sample, int target,
                      std::map<std::string, double>* meta) {
    if (sample.frames.empty()) throw std::invalid_argument("resize: empty sample");
    const int side = sample.frames.front().width;
    if (sample.frames.front().height != side)
        throw std::invalid_argument("resize: input must be square");
    const double scale = double(target) / double(side);

    SequenceSample out;
    out.video_id = sample.video_id;
    out.cow_id = sample.cow_id;
    out.start_frame = sample.start_frame;
    for (size_t f = 0; f < sample.frames.size(); ++f) {
        const Image& src = sample.frames[f];
        if (src.width != side || src.height != side)
            throw std::invalid_argument("resize: frames differ in size");
        Image dst(target, target);
        if (side == target) {
            dst = src;
        } else {
            for (int y = 0; y < target; ++y)
                for (int x = 0; x < target; ++x) {
                    const double sx = x / scale;
                    const double sy = y / scale;
                    for (int c = 0; c < 3; ++c)
                        dst.px(x, y)[c] = uint8_t(
                            std::clamp(std::lround(bilinear_sample(src, sx, sy, c)),
                                       0L, 255L));
                }
        }
        out.frames.push_back(std::move(dst));

        Pose pose = sample.poses[f];
        for (int k = 0; k < kNumKeypoints; ++k) {
            pose.coords[size_t(k)].x *= scale;
            pose.coords[size_t(k)].y *= scale;
        }
        pose.clamp_visibility(target, target);
        out.poses.push_back(pose);
    }
    if (meta) (*meta)["resize_scale"] = scale;
    return out;
}

SequenceSample augment(const SequenceSample& sample, const AugmentParams& params) {
    SequenceSample out;
    out.video_id = sample.video_id;
    out.cow_id = sample.cow_id;
    out.start_frame = sample.start_frame;

    const double theta = params.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);

    for (size_t f = 0; f < sample.frames.size(); ++f) {
        const Image& src = sample.frames[f];
        const double cx = src.width / 2.0, cy = src.height / 2.0;
        Image dst(src.width, src.height);
        const bool identity = params.rotation_deg == 0.0;
        for (int y = 0; y < src.height; ++y)
            for (int x = 0; x < src.width; ++x) {
                double v[3];
                if (identity) {
                    const uint8_t* p = src.px(x, y);
                    v[0] = p[0];
                    v[1] = p[1];
                    v[2] = p[2];
                } else {
                    // inverse rotation of the output pixel into the source
                    const double dx = x - cx, dy = y - cy;
                    const double sx = c * dx + s * dy + cx;
                    const double sy = -s * dx + c * dy + cy;
                    if (sx < -0.5 || sx > src.width - 0.5 || sy < -0.5 ||
                        sy > src.height - 0.5) {
                        v[0] = v[1] = v[2] = 0.0;
                    } else {
                        for (int ch = 0; ch < 3; ++ch)
                            v[ch] = bilinear_sample(src, sx, sy, ch);
                    }
                }
                for (int ch = 0; ch < 3; ++ch) {
                    const double mapped =
                        params.contrast_gain * v[ch] + params.brightness;
                    dst.px(x, y)[ch] =
                        uint8_t(std::clamp(std::lround(mapped), 0L, 255L));
                }
            }
        out.frames.push_back(std::move(dst));

        Pose pose = sample.poses[f];
        for (int k = 0; k < kNumKeypoints; ++k) {
            const double dx = pose.coords[size_t(k)].x - cx;
            const double dy = pose.coords[size_t(k)].y - cy;
            pose.coords[size_t(k)].x = c * dx - s * dy + cx;
            pose.coords[size_t(k)].y = s * dx + c * dy + cy;
            if (pose.visible[size_t(k)]) {
                const Point2& p = pose.coords[size_t(k)];
                pose.visible[size_t(k)] = p.x >= 0.0 && p.x < src.width &&
                                          p.y >= 0.0 && p.y < src.height;
            }
        }
        out.poses.push_back(pose);
    }
    return out;
}

SplitScheme split_scheme_from_string(const std::string& s) {
    if (s == "cowalk30") return SplitScheme::Cowalk30;
    if (s == "cowalk10") return SplitScheme::Cowalk10;
    throw std::invalid_argument("unknown split scheme: " + s);
}

const char* to_string(SplitScheme s) {
    return s == SplitScheme::Cowalk30 ? "cowalk30" : "cowalk10";
}

bool is_test_partition(const DatasetManifest& m) {
    return m.notes.find("partition=test") != std::string::npos;
}

namespace {

DatasetManifest subset(const DatasetManifest& src, const std::vector<size_t>& idx,
                       const std::string& partition_note) {
    DatasetManifest out;
    out.dir = src.dir;
    out.frame_width = src.frame_width;
    out.frame_height = src.frame_height;
    out.notes = partition_note;
    for (size_t i : idx) out.samples.push_back(src.samples[i]);
    return out;
}

}  // namespace

SplitResult split(const DatasetManifest& manifest, const SplitSpec& spec) {
    SplitResult result;
    json audit;
    audit["scheme"] = to_string(spec.scheme);
    audit["seed"] = spec.seed;

    if (spec.scheme == SplitScheme::Cowalk30) {
        std::vector<size_t> idx(manifest.samples.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(mix_seed(spec.seed, 30));
        rng.shuffle(idx);
        const size_t n_train = size_t(0.8 * double(idx.size()));
        std::vector<size_t> train_idx(idx.begin(), idx.begin() + long(n_train));
        std::vector<size_t> test_idx(idx.begin() + long(n_train), idx.end());
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(test_idx.begin(), test_idx.end());
        result.train = subset(manifest, train_idx, "partition=train");
        result.test_known = subset(manifest, test_idx, "partition=test_known");
        audit["counts"] = {{"train", train_idx.size()}, {"test_known", test_idx.size()}};
        result.audit_json = audit.dump(1);
        return result;
    }

    // cowalk10: group samples by cow, draw 10 training cows, split each
    // training cow's samples 50/50 (floor to train), everything else to
    // the unknown-cows test set.
    std::map<std::string, std::vector<size_t>> by_cow;
    for (size_t i = 0; i < manifest.samples.size(); ++i)
        by_cow[manifest.samples[i].cow_id].push_back(i);
    if (by_cow.size() < 11)
        throw std::invalid_argument(
            "cowalk10 split requires at least 11 distinct cows, got " +
            std::to_string(by_cow.size()));

    std::vector<std::string> pool;
    if (spec.train_cow_pool.empty()) {
        for (const auto& [cow, _] : by_cow) pool.push_back(cow);
    } else {
        std::set<std::string> have;
        for (const auto& [cow, _] : by_cow) have.insert(cow);
        for (const std::string& cow : spec.train_cow_pool)
            if (have.count(cow)) pool.push_back(cow);
        std::sort(pool.begin(), pool.end());
    }
    if (pool.size() < 10)
        throw std::invalid_argument("cowalk10 split: fewer than 10 eligible cows");

    Rng rng(mix_seed(spec.seed, 10));
    rng.shuffle(pool);
    std::set<std::string> train_cows(pool.begin(), pool.begin() + 10);

    std::vector<size_t> train_idx, known_idx, unknown_idx;
    json assignments;
    for (const auto& [cow, ids] : by_cow) {
        if (!train_cows.count(cow)) {
            unknown_idx.insert(unknown_idx.end(), ids.begin(), ids.end());
            assignments[cow] = "test_unknown";
            continue;
        }
        std::vector<size_t> shuffled = ids;
        Rng cow_rng(mix_seed(spec.seed, fnv1a(cow)));
        cow_rng.shuffle(shuffled);
        const size_t half = shuffled.size() / 2;  // odd counts floor to train
        train_idx.insert(train_idx.end(), shuffled.begin(), shuffled.begin() + long(half));
        known_idx.insert(known_idx.end(), shuffled.begin() + long(half), shuffled.end());
        assignments[cow] = "train+test_known";
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(known_idx.begin(), known_idx.end());
    std::sort(unknown_idx.begin(), unknown_idx.end());

    result.train = subset(manifest, train_idx, "partition=train");
    result.test_known = subset(manifest, known_idx, "partition=test_known");
    result.test_unknown = subset(manifest, unknown_idx, "partition=test_unknown");
    audit["cows"] = assignments;
    audit["counts"] = {{"train", train_idx.size()},
                       {"test_known", known_idx.size()},
                       {"test_unknown", unknown_idx.size()}};
    result.audit_json = audit.dump(1);
    return result;
}

std::string prepare_dataset(const std::string& manifest_path, int margin, int target,
                            const std::string& out_dir) {
    const DatasetManifest src = load_manifest(manifest_path);
    fs::create_directories(out_dir);

    DatasetManifest out;
    out.dir = out_dir;
    out.frame_width = target;
    out.frame_height = target;
    out.notes = src.notes;

    for (size_t i = 0; i < src.samples.size(); ++i) {
        const SampleRecord& rec = src.samples[i];
        SequenceSample loaded = load_sample(src, rec);
        CropResult cropped = crop(loaded, margin);
        SequenceSample prepared = resize(cropped.sample, target);

        SampleRecord out_rec;
        out_rec.video_id = rec.video_id;
        out_rec.cow_id = rec.cow_id;
        out_rec.start_frame = rec.start_frame;
        const std::string sample_dir = rec.video_id;
        fs::create_directories(fs::path(out_dir) / sample_dir);
        for (size_t f = 0; f < prepared.frames.size(); ++f) {
            char name[64];
            std::snprintf(name, sizeof(name), "s%05zu_f%d.png", i,
                          rec.start_frame + int(f));
            const std::string rel = (fs::path(sample_dir) / name).string();
            write_png(prepared.frames[f], (fs::path(out_dir) / rel).string());
            out_rec.frame_paths.push_back(rel);
            out_rec.poses.push_back(prepared.poses[f]);
        }
        out.samples.push_back(std::move(out_rec));
    }
    const std::string out_manifest = (fs::path(out_dir) / "manifest.json").string();
    save_manifest(out, out_manifest);
    return out_manifest;
}

}  // namespace tleap::datapipe
