#include "tleap/occlude.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap::occlude {

Region region_from_string(const std::string& s) {
    if (s == "hind" || s == "hind_legs") return Region::HindLegs;
    if (s == "fore" || s == "fore_legs") return Region::ForeLegs;
    if (s == "head") return Region::Head;
    throw std::invalid_argument("unknown occlusion region: " + s);
}

const char* to_string(Region r) {
    switch (r) {
        case Region::HindLegs: return "hind_legs";
        case Region::ForeLegs: return "fore_legs";
        case Region::Head: return "head";
    }
    throw std::invalid_argument("unknown region");
}

const std::vector<int>& region_keypoints(Region r) {
    static const std::vector<int> hind = {kLHHoof, kLHFetlock, kLHCarpal,
                                          kRHHoof, kRHFetlock, kRHCarpal};
    static const std::vector<int> fore = {kLFHoof, kLFFetlock, kLFCarpal,
                                          kRFHoof, kRFFetlock, kRFCarpal};
    static const std::vector<int> head = {kNose, kForehead};
    switch (r) {
        case Region::HindLegs: return hind;
        case Region::ForeLegs: return fore;
        case Region::Head: return head;
    }
    throw std::invalid_argument("unknown region");
}

std::string OcclusionLayout::to_json() const {
    json arr = json::array();
    for (const Bar& b : bars)
        arr.push_back(json{{"region", b.region},
                           {"x_center", b.x_center},
                           {"width", b.width},
                           {"color", {b.color[0], b.color[1], b.color[2]}}});
    return json{{"bars", arr}}.dump(1);
}

OcclusionLayout OcclusionLayout::from_json(const std::string& text) {
    OcclusionLayout layout;
    json doc = json::parse(text);
    for (const json& jb : doc.at("bars")) {
        Bar b;
        b.region = jb.at("region").get<std::string>();
        b.x_center = jb.at("x_center").get<double>();
        b.width = jb.at("width").get<int>();
        for (int c = 0; c < 3; ++c) b.color[size_t(c)] = jb.at("color")[size_t(c)].get<uint8_t>();
        layout.bars.push_back(b);
    }
    return layout;
}

OcclusionLayout compute_layout(const DatasetManifest& manifest,
                               const std::vector<Region>& regions, int bar_width) {
    if (manifest.samples.empty())
        throw std::invalid_argument("compute_layout: empty manifest");
    OcclusionLayout layout;
    for (Region r : regions) {
        double sum = 0.0;
        int64_t count = 0;
        for (const SampleRecord& rec : manifest.samples)
            for (const Pose& pose : rec.poses)
                for (int k : region_keypoints(r)) {
                    sum += pose.coords[size_t(k)].x;
                    ++count;
                }
        Bar b;
        b.region = to_string(r);
        b.width = bar_width;
        b.x_center = sum / double(count);
        layout.bars.push_back(b);
    }
    return layout;
}

std::vector<int> bar_columns(const Bar& bar, int image_width) {
    // Width-w bar on a real-valued center: integer columns in
    // [round(x) - w/2, round(x) + w/2), exactly w columns before clipping.
    const int cx = int(std::lround(bar.x_center));
    std::vector<int> cols;
    for (int x = cx - bar.width / 2; x < cx + (bar.width + 1) / 2; ++x)
        if (x >= 0 && x < image_width) cols.push_back(x);
    return cols;
}

SequenceSample apply(const SequenceSample& sample, const OcclusionLayout& layout) {
    SequenceSample out = sample;  // poses intentionally bit-identical
    for (Image& frame : out.frames)
        for (const Bar& b : layout.bars)
            for (int x : bar_columns(b, frame.width))
                for (int y = 0; y < frame.height; ++y)
                    frame.set(x, y, b.color[0], b.color[1], b.color[2]);
    return out;
}

std::string apply_to_dataset(const DatasetManifest& manifest,
                             const OcclusionLayout& layout,
                             const std::string& out_dir) {
    fs::create_directories(out_dir);
    DatasetManifest out;
    out.dir = out_dir;
    out.frame_width = manifest.frame_width;
    out.frame_height = manifest.frame_height;
    out.notes = manifest.notes;

    for (size_t i = 0; i < manifest.samples.size(); ++i) {
        const SampleRecord& rec = manifest.samples[i];
        SequenceSample occluded = apply(load_sample(manifest, rec), layout);
        SampleRecord out_rec = rec;
        out_rec.frame_paths.clear();
        const std::string sample_dir = rec.video_id;
        fs::create_directories(fs::path(out_dir) / sample_dir);
        for (size_t f = 0; f < occluded.frames.size(); ++f) {
            char name[64];
            std::snprintf(name, sizeof(name), "s%05zu_f%d.png", i,
                          rec.start_frame + int(f));
            const std::string rel = (fs::path(sample_dir) / name).string();
            write_png(occluded.frames[f], (fs::path(out_dir) / rel).string());
            out_rec.frame_paths.push_back(rel);
        }
        out.samples.push_back(std::move(out_rec));
    }
    std::ofstream(fs::path(out_dir) / "layout.json") << layout.to_json() << "\n";
    const std::string out_manifest = (fs::path(out_dir) / "manifest.json").string();
    save_manifest(out, out_manifest);
    return out_manifest;
}

}  // namespace tleap::occlude
