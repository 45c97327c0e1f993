#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "tleap/eval.hpp"
#include "tleap/rng.hpp"

using namespace tleap;
using namespace tleap::eval;

namespace {

Pose random_pose(Rng& rng, double span = 200.0) {
    Pose p;
    for (int k = 0; k < kNumKeypoints; ++k)
        p.coords[size_t(k)] = {rng.uniform(0, span), rng.uniform(0, span)};
    return p;
}

/// Independent brute-force PCKh: a direct loop, no shared code with the
/// implementation under test.
double brute_force_pckh(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
                        double theta) {
    long total = 0, correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (!gts[i].visible[kNose] || !gts[i].visible[kForehead]) continue;
        const double hx = gts[i].coords[kForehead].x - gts[i].coords[kNose].x;
        const double hy = gts[i].coords[kForehead].y - gts[i].coords[kNose].y;
        const double h = std::sqrt(hx * hx + hy * hy);
        for (int k = 0; k < kNumKeypoints; ++k) {
            if (!gts[i].visible[size_t(k)]) continue;
            const double dx = preds[i].coords[size_t(k)].x - gts[i].coords[size_t(k)].x;
            const double dy = preds[i].coords[size_t(k)].y - gts[i].coords[size_t(k)].y;
            ++total;
            if (std::sqrt(dx * dx + dy * dy) - h * theta <= 0.0) ++correct;
        }
    }
    return total ? double(correct) / double(total) : 0.0;
}

/// Exhaustive 2^n enumeration oracle for the exact Wilcoxon p-value.
double enumerate_wilcoxon_p(const std::vector<double>& a,
                            const std::vector<double>& b) {
    std::vector<double> diffs;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
    const size_t n = diffs.size();
    // midranks of |d|
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) {
        return std::abs(diffs[x]) < std::abs(diffs[y]);
    });
    std::vector<double> rank(n);
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j < n && std::abs(diffs[idx[j]]) == std::abs(diffs[idx[i]])) ++j;
        for (size_t k = i; k < j; ++k) rank[idx[k]] = (double(i + 1) + double(j)) / 2.0;
        i = j;
    }
    double w_obs = 0;
    for (size_t i = 0; i < n; ++i)
        if (diffs[i] > 0) w_obs += rank[i];

    long below = 0, above = 0;
    const long total = 1L << n;
    for (long mask = 0; mask < total; ++mask) {
        double w = 0;
        for (size_t i = 0; i < n; ++i)
            if (mask & (1L << i)) w += rank[i];
        if (w <= w_obs + 1e-12) ++below;
        if (w >= w_obs - 1e-12) ++above;
    }
    return std::min(1.0, 2.0 * double(std::min(below, above)) / double(total));
}

}  // namespace

TEST_CASE("pckh: perfect predictions score 1.0") {
    Rng rng(1);
    std::vector<Pose> poses;
    for (int i = 0; i < 10; ++i) poses.push_back(random_pose(rng));
    PckhReport r = pckh(poses, poses, 0.2);
    CHECK(r.overall == 1.0);
    CHECK(r.n_instances == 10 * 17);
    for (const auto& [g, v] : r.per_group) CHECK(v == 1.0);
}

TEST_CASE("pckh: boundary error exactly h*theta counts as correct") {
    Pose gt;
    for (int k = 0; k < kNumKeypoints; ++k) gt.coords[size_t(k)] = {100, 100};
    gt.coords[kForehead] = {100, 100};
    gt.coords[kNose] = {150, 100};  // head length 50
    Pose pred = gt;
    pred.coords[0] = {110, 100};  // error exactly 10 = 50 * 0.2
    PckhReport r = pckh({pred}, {gt}, 0.2);
    CHECK(r.per_keypoint[0] == 1.0);

    pred.coords[0] = {110.0001, 100};
    PckhReport r2 = pckh({pred}, {gt}, 0.2);
    CHECK(r2.per_keypoint[0] == 0.0);
}

TEST_CASE("pckh: 14 exact + 3 at 12px with h=50, theta=0.2 gives 14/17") {
    Pose gt;
    for (int k = 0; k < kNumKeypoints; ++k)
        gt.coords[size_t(k)] = {100.0 + 3.0 * k, 100.0};
    gt.coords[kForehead] = {0, 0};
    gt.coords[kNose] = {50, 0};  // head length 50, threshold 10
    Pose pred = gt;
    for (int k : {0, 1, 2}) pred.coords[size_t(k)].y += 12.0;  // 3 keypoints at 12 px
    PckhReport r = pckh({pred}, {gt}, 0.2);
    CHECK(r.overall == doctest::Approx(14.0 / 17.0).epsilon(1e-12));
}

TEST_CASE("pckh: samples with invisible head are skipped and tallied") {
    Rng rng(2);
    Pose good = random_pose(rng);
    Pose bad = random_pose(rng);
    bad.visible[kNose] = false;
    PckhDetail detail;
    PckhReport r = pckh({good, bad}, {good, bad}, 0.2, &detail);
    CHECK(r.n_skipped_samples == 1);
    CHECK(r.n_instances == 17);
    REQUIRE(detail.correct.size() == 2);
    for (int8_t v : detail.correct[1]) CHECK(v == -1);
    CHECK(detail.per_sample_scores().size() == 1);

    CHECK_THROWS_AS(pckh({good}, {good, bad}, 0.2), std::invalid_argument);
}

TEST_CASE("pckh matches the brute-force oracle on 200 random sets") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + int(rng.uniform_index(6));
        std::vector<Pose> preds, gts;
        for (int i = 0; i < n; ++i) {
            Pose gt = random_pose(rng);
            Pose pred = gt;
            for (int k = 0; k < kNumKeypoints; ++k) {
                pred.coords[size_t(k)].x += rng.uniform(-30, 30);
                pred.coords[size_t(k)].y += rng.uniform(-30, 30);
                if (rng.uniform() < 0.05) gt.visible[size_t(k)] = false;
            }
            preds.push_back(pred);
            gts.push_back(gt);
        }
        const double theta = rng.uniform(0.0, 0.6);
        PckhReport r = pckh(preds, gts, theta);
        CHECK(std::abs(r.overall - brute_force_pckh(preds, gts, theta)) <= 1e-12);
    }
}

TEST_CASE("pckh: monotone in theta and scale invariant") {
    Rng rng(7);
    std::vector<Pose> preds, gts;
    for (int i = 0; i < 20; ++i) {
        Pose gt = random_pose(rng);
        Pose pred = gt;
        for (int k = 0; k < kNumKeypoints; ++k) {
            pred.coords[size_t(k)].x += rng.uniform(-20, 20);
            pred.coords[size_t(k)].y += rng.uniform(-20, 20);
        }
        preds.push_back(pred);
        gts.push_back(gt);
    }
    double prev = -1.0;
    for (double theta : {0.0, 0.1, 0.2, 0.5, 1.0}) {
        const double v = pckh(preds, gts, theta).overall;
        CHECK(v >= prev);
        prev = v;
    }

    // scaling every coordinate by a common factor flips no decision
    PckhDetail d1, d2;
    pckh(preds, gts, 0.2, &d1);
    std::vector<Pose> preds_s = preds, gts_s = gts;
    for (auto* poses : {&preds_s, &gts_s})
        for (Pose& p : *poses)
            for (int k = 0; k < kNumKeypoints; ++k) {
                p.coords[size_t(k)].x *= 3.7;
                p.coords[size_t(k)].y *= 3.7;
            }
    pckh(preds_s, gts_s, 0.2, &d2);
    REQUIRE(d1.correct.size() == d2.correct.size());
    for (size_t i = 0; i < d1.correct.size(); ++i)
        for (int k = 0; k < kNumKeypoints; ++k)
            CHECK(d1.correct[i][size_t(k)] == d2.correct[i][size_t(k)]);
}

TEST_CASE("wilcoxon: identical scores are undefined with p=1") {
    std::vector<double> a = {1, 2, 3, 4, 5, 6};
    WilcoxonResult r = wilcoxon_signed_rank(a, a);
    CHECK(r.undefined);
    CHECK(r.p_value == 1.0);
    CHECK(!r.significant_at_05());
}

TEST_CASE("wilcoxon: n=6 all-positive distinct differences give p = 2/64") {
    std::vector<double> b = {10, 20, 30, 40, 50, 60};
    std::vector<double> a = {11, 22, 33, 44, 55, 66};
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.p_value == doctest::Approx(2.0 / 64.0).epsilon(1e-12));
    CHECK(r.statistic == doctest::Approx(21.0));
}

TEST_CASE("wilcoxon: constant positive shift at n=20 is significant") {
    Rng rng(8);
    std::vector<double> b, a;
    for (int i = 0; i < 20; ++i) {
        const double v = rng.uniform(0, 1);
        b.push_back(v);
        a.push_back(v + 0.05);
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(r.exact);
    CHECK(r.p_value < 0.05);
    CHECK(r.significant_at_05());
}

TEST_CASE("wilcoxon: swapping a and b leaves the two-sided p unchanged") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a, b;
        const int n = 6 + int(rng.uniform_index(15));
        for (int i = 0; i < n; ++i) {
            a.push_back(rng.uniform(0, 1));
            b.push_back(rng.uniform(0, 1));
        }
        WilcoxonResult r1 = wilcoxon_signed_rank(a, b);
        WilcoxonResult r2 = wilcoxon_signed_rank(b, a);
        CHECK(r1.p_value == doctest::Approx(r2.p_value).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon: exact p matches 2^n enumeration, including ties") {
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 5 + int(rng.uniform_index(8));  // 5..12
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) {
            const double v = rng.uniform(0, 1);
            // quantized differences produce frequent ties
            const double d = (double(rng.uniform_index(9)) - 4.0) / 4.0;
            a.push_back(v + d);
            b.push_back(v);
        }
        bool all_zero = true;
        for (int i = 0; i < n; ++i) all_zero &= a[i] == b[i];
        int nonzero = 0;
        for (int i = 0; i < n; ++i) nonzero += a[i] != b[i] ? 1 : 0;
        if (all_zero || nonzero < 5) continue;
        WilcoxonResult r = wilcoxon_signed_rank(a, b);
        CHECK(r.p_value == doctest::Approx(enumerate_wilcoxon_p(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("wilcoxon: normal approximation branch for large n") {
    Rng rng(11);
    std::vector<double> a, b;
    for (int i = 0; i < 60; ++i) {
        const double v = rng.uniform(0, 1);
        b.push_back(v);
        a.push_back(v + rng.uniform(-0.02, 0.1));
    }
    WilcoxonResult r = wilcoxon_signed_rank(a, b);
    CHECK(!r.exact);
    CHECK(r.p_value < 0.05);  // strongly shifted

    CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3}, {2, 3, 4}),
                    std::invalid_argument);
}

TEST_CASE("evaluate_poses: report structure has the five groups, theta monotone") {
    Rng rng(12);
    std::vector<Pose> gts, preds;
    for (int i = 0; i < 12; ++i) {
        Pose gt = random_pose(rng);
        Pose pred = gt;
        for (int k = 0; k < kNumKeypoints; ++k) pred.coords[size_t(k)].x += rng.uniform(-15, 15);
        gts.push_back(gt);
        preds.push_back(pred);
    }
    EvalResult r = evaluate_poses(preds, gts, {0.2, 0.5});
    REQUIRE(r.reports.count(0.2));
    REQUIRE(r.reports.count(0.5));
    const auto& groups = r.reports.at(0.2).per_group;
    REQUIRE(groups.size() == 5);
    CHECK(groups.count("head"));
    CHECK(groups.count("spine"));
    CHECK(groups.count("carpal_tarsal"));
    CHECK(groups.count("fetlock"));
    CHECK(groups.count("hoof"));
    CHECK(r.reports.at(0.5).overall >= r.reports.at(0.2).overall);
}
