#include "tleap/sample.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap {

namespace {

json skeleton_json() {
    const Skeleton& sk = skeleton();
    json groups;
    for (int g = 0; g < kNumGroups; ++g) {
        json members = json::array();
        for (int idx : sk.group_members(BodyGroup(g))) members.push_back(idx + 1);
        groups[to_string(BodyGroup(g))] = members;
    }
    return json{{"keypoints", sk.keypoint_names()}, {"groups", groups}};
}

void check_skeleton_json(const json& j) {
    const json expected = skeleton_json();
    if (j.at("keypoints") != expected.at("keypoints"))
        throw std::runtime_error("manifest skeleton does not match the fixed 17-keypoint taxonomy");
    if (j.at("groups") != expected.at("groups"))
        throw std::runtime_error("manifest skeleton groups do not match the fixed taxonomy");
}

json pose_coords_json(const Pose& p) {
    json arr = json::array();
    for (int k = 0; k < kNumKeypoints; ++k)
        arr.push_back(json::array({p.coords[size_t(k)].x, p.coords[size_t(k)].y}));
    return arr;
}

Pose pose_from_json(const json& arr) {
    if (arr.size() != kNumKeypoints)
        throw std::runtime_error("pose entry must have 17 coordinate pairs");
    Pose p;
    for (int k = 0; k < kNumKeypoints; ++k) {
        p.coords[size_t(k)].x = arr[size_t(k)].at(0).get<double>();
        p.coords[size_t(k)].y = arr[size_t(k)].at(1).get<double>();
    }
    return p;
}

}  // namespace

std::string DatasetManifest::frame_abspath(const SampleRecord& rec, size_t frame_idx) const {
    return (fs::path(dir) / rec.frame_paths.at(frame_idx)).string();
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    // Frame paths are stored relative to the manifest's directory. When a
    // manifest built against one directory is saved elsewhere (split
    // partitions), re-relativize the paths lexically.
    fs::path target_dir = fs::absolute(path).parent_path();
    fs::path source_dir = fs::absolute(m.dir.empty() ? "." : m.dir);
    const bool rebase = target_dir.lexically_normal() != source_dir.lexically_normal();

    json samples = json::array();
    for (const SampleRecord& rec : m.samples) {
        json poses = json::array();
        for (const Pose& p : rec.poses) poses.push_back(pose_coords_json(p));
        json frames = json::array();
        for (const std::string& rel : rec.frame_paths)
            frames.push_back(rebase
                                 ? (source_dir / rel)
                                       .lexically_normal()
                                       .lexically_relative(target_dir.lexically_normal())
                                       .string()
                                 : rel);
        samples.push_back(json{{"video_id", rec.video_id},
                               {"cow_id", rec.cow_id},
                               {"start_frame", rec.start_frame},
                               {"frames", frames},
                               {"poses", poses}});
    }
    json doc{{"skeleton", skeleton_json()},
             {"samples", samples},
             {"metadata",
              {{"frame_width", m.frame_width},
               {"frame_height", m.frame_height},
               {"notes", m.notes}}}};
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_manifest: cannot write " + path);
    out << doc.dump(1) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    json doc = json::parse(in);
    check_skeleton_json(doc.at("skeleton"));

    DatasetManifest m;
    m.dir = fs::path(path).parent_path().string();
    if (m.dir.empty()) m.dir = ".";
    const json& meta = doc.at("metadata");
    m.frame_width = meta.at("frame_width").get<int>();
    m.frame_height = meta.at("frame_height").get<int>();
    m.notes = meta.value("notes", "");

    for (const json& s : doc.at("samples")) {
        SampleRecord rec;
        rec.video_id = s.at("video_id").get<std::string>();
        rec.cow_id = s.at("cow_id").get<std::string>();
        if (rec.cow_id.empty())
            throw std::runtime_error("load_manifest: sample without cow_id");
        rec.start_frame = s.at("start_frame").get<int>();
        rec.frame_paths = s.at("frames").get<std::vector<std::string>>();
        for (const json& p : s.at("poses")) {
            Pose pose = pose_from_json(p);
            pose.clamp_visibility(m.frame_width, m.frame_height);
            rec.poses.push_back(pose);
        }
        if (rec.poses.size() != rec.frame_paths.size())
            throw std::runtime_error("load_manifest: poses/frames length mismatch");
        for (size_t f = 0; f < rec.frame_paths.size(); ++f) {
            const std::string abspath = m.frame_abspath(rec, f);
            if (!fs::exists(abspath))
                throw std::runtime_error("load_manifest: missing frame file " + abspath);
        }
        m.samples.push_back(std::move(rec));
    }
    return m;
}

SequenceSample load_sample(const DatasetManifest& m, const SampleRecord& rec) {
    SequenceSample s;
    s.video_id = rec.video_id;
    s.cow_id = rec.cow_id;
    s.start_frame = rec.start_frame;
    s.poses = rec.poses;
    for (size_t f = 0; f < rec.frame_paths.size(); ++f) {
        Image img = read_png(m.frame_abspath(rec, f));
        if (img.width != m.frame_width || img.height != m.frame_height)
            throw std::runtime_error("load_sample: frame size mismatch in " +
                                     rec.frame_paths[f]);
        s.frames.push_back(std::move(img));
    }
    return s;
}

}  // namespace tleap
