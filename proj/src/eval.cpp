#include "tleap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tleap/confmap.hpp"
#include "tleap/net.hpp"
#include "tleap/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tleap::eval {

std::vector<double> PckhDetail::per_sample_scores() const {
    std::vector<double> out;
    for (const auto& row : correct) {
        int64_t n = 0, c = 0;
        for (int8_t v : row) {
            if (v < 0) continue;
            ++n;
            c += v;
        }
        if (n > 0) out.push_back(double(c) / double(n));
    }
    return out;
}

PckhReport pckh(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
                double theta, PckhDetail* detail) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("pckh: prediction/ground-truth length mismatch");

    PckhReport report;
    report.theta = theta;
    std::array<int64_t, kNumKeypoints> kp_total{};
    std::array<int64_t, kNumKeypoints> kp_correct{};
    if (detail) detail->correct.clear();

    for (size_t i = 0; i < preds.size(); ++i) {
        const Pose& gt = gts[i];
        std::array<int8_t, kNumKeypoints> row;
        row.fill(-1);
        if (!gt.head_visible()) {
            ++report.n_skipped_samples;
            if (detail) detail->correct.push_back(row);
            continue;
        }
        const double h = head_length(gt);
        const double limit = h * theta;
        for (int k = 0; k < kNumKeypoints; ++k) {
            if (!gt.visible[size_t(k)]) continue;  // not an evaluable instance
            const double dx = preds[i].coords[size_t(k)].x - gt.coords[size_t(k)].x;
            const double dy = preds[i].coords[size_t(k)].y - gt.coords[size_t(k)].y;
            const bool ok = std::sqrt(dx * dx + dy * dy) <= limit;
            row[size_t(k)] = ok ? 1 : 0;
            ++kp_total[size_t(k)];
            kp_correct[size_t(k)] += ok ? 1 : 0;
        }
        if (detail) detail->correct.push_back(row);
    }

    int64_t total = 0, correct = 0;
    for (int k = 0; k < kNumKeypoints; ++k) {
        total += kp_total[size_t(k)];
        correct += kp_correct[size_t(k)];
        report.per_keypoint[size_t(k)] =
            kp_total[size_t(k)] ? double(kp_correct[size_t(k)]) / double(kp_total[size_t(k)])
                                : 0.0;
    }
    report.n_instances = total;
    report.overall = total ? double(correct) / double(total) : 0.0;

    const Skeleton& sk = skeleton();
    for (int g = 0; g < kNumGroups; ++g) {
        int64_t gt_total = 0, gt_correct = 0;
        for (int k : sk.group_members(BodyGroup(g))) {
            gt_total += kp_total[size_t(k)];
            gt_correct += kp_correct[size_t(k)];
        }
        report.per_group[to_string(BodyGroup(g))] =
            gt_total ? double(gt_correct) / double(gt_total) : 0.0;
    }
    return report;
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("wilcoxon: paired score lengths differ");

    std::vector<double> diffs;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }

    WilcoxonResult result;
    result.n_effective = int(diffs.size());
    if (diffs.empty()) {
        result.undefined = true;
        result.p_value = 1.0;
        return result;
    }
    if (diffs.size() < 5)
        throw std::invalid_argument(
            "wilcoxon: needs >= 5 nonzero differences, got " +
            std::to_string(diffs.size()));

    const size_t n = diffs.size();
    // midranks of |d|
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) {
        return std::abs(diffs[x]) < std::abs(diffs[y]);
    });
    std::vector<double> rank(n);
    std::vector<int64_t> tie_sizes;
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j < n && std::abs(diffs[idx[j]]) == std::abs(diffs[idx[i]])) ++j;
        const double mid = (double(i + 1) + double(j)) / 2.0;
        for (size_t k = i; k < j; ++k) rank[idx[k]] = mid;
        tie_sizes.push_back(int64_t(j - i));
        i = j;
    }

    double w_plus = 0.0;
    for (size_t i = 0; i < n; ++i)
        if (diffs[i] > 0) w_plus += rank[i];
    result.statistic = w_plus;

    if (n <= 25) {
        // Exact conditional distribution of W+ over all 2^n sign
        // assignments, via a subset-sum DP on doubled midranks (doubling
        // makes midranks like 2.5 exact integers).
        result.exact = true;
        std::vector<int64_t> r2(n);
        int64_t s2 = 0;
        for (size_t i = 0; i < n; ++i) {
            r2[i] = int64_t(std::llround(2.0 * rank[i]));
            s2 += r2[i];
        }
        std::vector<double> count(size_t(s2 + 1), 0.0);
        count[0] = 1.0;
        for (size_t i = 0; i < n; ++i)
            for (int64_t w = s2; w >= r2[i]; --w)
                count[size_t(w)] += count[size_t(w - r2[i])];
        const int64_t obs2 = int64_t(std::llround(2.0 * w_plus));
        double below = 0.0, above = 0.0;
        for (int64_t w = 0; w <= s2; ++w) {
            if (w <= obs2) below += count[size_t(w)];
            if (w >= obs2) above += count[size_t(w)];
        }
        const double total = std::pow(2.0, double(n));
        result.p_value = std::min(1.0, 2.0 * std::min(below, above) / total);
        return result;
    }

    // normal approximation with tie correction
    const double dn = double(n);
    const double mu = dn * (dn + 1.0) / 4.0;
    double tie_term = 0.0;
    for (int64_t t : tie_sizes) tie_term += double(t) * double(t) * double(t) - double(t);
    const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = (w_plus - mu) / std::sqrt(var);
    result.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
    return result;
}

EvalResult evaluate_poses(const std::vector<Pose>& preds,
                          const std::vector<Pose>& gts,
                          const std::vector<double>& thetas) {
    EvalResult result;
    result.pred_poses = preds;
    result.gt_poses = gts;
    for (double theta : thetas) {
        PckhDetail detail;
        result.reports[theta] = pckh(preds, gts, theta, &detail);
        result.details[theta] = std::move(detail);
    }
    return result;
}

EvalResult evaluate_model(const std::string& checkpoint_path,
                          const DatasetManifest& manifest,
                          const std::vector<double>& thetas, int batch_size) {
    nn::ModelConfig config = nn::peek_checkpoint_config(checkpoint_path);
    nn::Network<float> net = nn::load_checkpoint(checkpoint_path, config);
    const int seq_len = config.seq_len;

    std::vector<Pose> preds, gts;
    std::vector<SequenceSample> loaded;
    auto flush = [&]() {
        if (loaded.empty()) return;
        std::vector<const SequenceSample*> ptrs;
        for (const SequenceSample& s : loaded) ptrs.push_back(&s);
        train::Batch batch = train::pack_batch(ptrs, seq_len, 5.0);
        nn::Tensor<float> out = net.forward(batch.input, false);
        const int h = int(out.dim(3)), w = int(out.dim(4));
        const int64_t plane = int64_t(h) * w;
        for (int64_t s = 0; s < int64_t(loaded.size()); ++s) {
            confmap::ConfidenceMapStack stack;
            stack.height = h;
            stack.width = w;
            stack.maps = nn::Tensor<float>({kNumKeypoints, h, w});
            std::copy_n(out.data() + s * kNumKeypoints * plane, kNumKeypoints * plane,
                        stack.maps.data());
            preds.push_back(confmap::decode(stack));
            gts.push_back(loaded[size_t(s)].poses.back());
        }
        loaded.clear();
    };

    for (const SampleRecord& rec : manifest.samples) {
        if (int(rec.frame_paths.size()) < seq_len)
            throw std::invalid_argument(
                "evaluate_model: manifest sample shorter than checkpoint T");
        loaded.push_back(load_sample(manifest, rec));
        if (int(loaded.size()) == batch_size) flush();
    }
    flush();
    return evaluate_poses(preds, gts, thetas);
}

namespace {

json report_to_json(const PckhReport& r) {
    json per_kp = json::array();
    for (double v : r.per_keypoint) per_kp.push_back(v);
    return json{{"theta", r.theta},
                {"overall", r.overall},
                {"per_group", r.per_group},
                {"per_keypoint", per_kp},
                {"n_instances", r.n_instances},
                {"n_skipped_samples", r.n_skipped_samples}};
}

}  // namespace

void write_report(const EvalResult& result, const std::string& json_path) {
    json reports = json::object();
    for (const auto& [theta, report] : result.reports) {
        char key[32];
        std::snprintf(key, sizeof(key), "%g", theta);
        reports[key] = report_to_json(report);
    }
    const json doc{{"reports", reports},
                   {"n_samples", result.gt_poses.size()}};
    fs::path base(json_path);
    if (!base.parent_path().empty()) fs::create_directories(base.parent_path());
    std::ofstream(json_path) << doc.dump(1) << "\n";

    for (const auto& [theta, detail] : result.details) {
        char suffix[48];
        std::snprintf(suffix, sizeof(suffix), "_correctness_theta%g.csv", theta);
        fs::path csv = base.parent_path() / (base.stem().string() + suffix);
        std::ofstream out(csv);
        out << "sample";
        for (int k = 1; k <= kNumKeypoints; ++k) out << ",kp" << k;
        out << "\n";
        for (size_t i = 0; i < detail.correct.size(); ++i) {
            out << i;
            for (int8_t v : detail.correct[i]) out << "," << int(v);
            out << "\n";
        }
    }
}

}  // namespace tleap::eval
