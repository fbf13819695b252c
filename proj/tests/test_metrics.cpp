#include <array>
#include <cmath>

#include "doctest.h"
#include "psv/error.hpp"
#include "psv/metrics.hpp"
#include "psv/rng.hpp"

using namespace psv;

namespace {

LabelMask random_mask(int w, int h, uint64_t seed, int max_class = 5) {
    Rng rng(seed);
    LabelMask m(w, h);
    for (auto& v : m.pixels) v = static_cast<uint8_t>(rng.uniform_int(0, max_class));
    return m;
}

// Independent per-pixel counting + metric formulas.
struct Oracle {
    uint64_t counts[6][6] = {};

    void add(const LabelMask& pred, const LabelMask& gt) {
        for (size_t i = 0; i < gt.pixels.size(); ++i) ++counts[gt.pixels[i]][pred.pixels[i]];
    }
    double pixel_acc() const {
        uint64_t diag = 0, total = 0;
        for (int g = 0; g < 6; ++g)
            for (int p = 0; p < 6; ++p) {
                total += counts[g][p];
                if (g == p) diag += counts[g][p];
            }
        return double(diag) / double(total);
    }
    double mean_iou() const {
        double sum = 0;
        int present = 0;
        for (int c = 0; c < 6; ++c) {
            uint64_t row = 0, col = 0;
            for (int k = 0; k < 6; ++k) {
                row += counts[c][k];
                col += counts[k][c];
            }
            const uint64_t denom = row + col - counts[c][c];
            if (denom == 0) continue;
            sum += double(counts[c][c]) / double(denom);
            ++present;
        }
        return sum / present;
    }
};

}  // namespace

TEST_CASE("accumulate counts agreements on the diagonal") {
    const LabelMask m = random_mask(16, 16, 1);
    ConfusionMatrix cm;
    accumulate(cm, m, m);
    CHECK(cm.total() == 256);
    for (int g = 0; g < 6; ++g)
        for (int p = 0; p < 6; ++p)
            if (g != p) CHECK(cm.at(g, p) == 0);
}

TEST_CASE("constant disagreement lands in one off-diagonal cell") {
    const LabelMask gt(10, 10, 0);
    const LabelMask pred(10, 10, 1);
    ConfusionMatrix cm;
    accumulate(cm, pred, gt);
    CHECK(cm.at(0, 1) == 100);
    CHECK(cm.total() == 100);
}

TEST_CASE("accumulate validates shape and range") {
    ConfusionMatrix cm;
    const LabelMask a(4, 4, 0);
    const LabelMask b(5, 4, 0);
    CHECK_THROWS_AS(accumulate(cm, a, b), ValidationError);
    LabelMask bad(4, 4, 0);
    bad.pixels[3] = 7;
    CHECK_THROWS_AS(accumulate(cm, bad, a), ValidationError);
}

TEST_CASE("random pairs match the brute-force oracle exactly") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const LabelMask gt = random_mask(24, 24, seed * 2);
        const LabelMask pred = random_mask(24, 24, seed * 2 + 1);
        ConfusionMatrix cm;
        accumulate(cm, pred, gt);
        Oracle oracle;
        oracle.add(pred, gt);
        for (int g = 0; g < 6; ++g)
            for (int p = 0; p < 6; ++p) CHECK(cm.at(g, p) == oracle.counts[g][p]);
        CHECK(pixel_acc(cm) == oracle.pixel_acc());
        CHECK(mean_iou(cm) == doctest::Approx(oracle.mean_iou()).epsilon(1e-12));
    }
}

TEST_CASE("perfect prediction scores 100 percent everywhere") {
    const LabelMask m = random_mask(32, 32, 5);
    ConfusionMatrix cm;
    accumulate(cm, m, m);
    CHECK(pixel_acc(cm) == 1.0);
    CHECK(mean_pixel_acc(cm) == 1.0);
    CHECK(mean_iou(cm) == 1.0);
    const auto iou = per_class_iou(cm);
    for (int c = 0; c < 6; ++c)
        if (!std::isnan(iou[c])) CHECK(iou[c] == 1.0);
}

TEST_CASE("the two-category toy matrix gives mIoU 60 percent") {
    // gt/pred confusion [[3,1],[1,3]] padded with empty categories:
    // IoU per class = 3 / (4 + 4 - 3) = 3/5.
    ConfusionMatrix cm;
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 3;
    const auto iou = per_class_iou(cm);
    CHECK(iou[0] == doctest::Approx(0.6));
    CHECK(iou[1] == doctest::Approx(0.6));
    for (int c = 2; c < 6; ++c) CHECK(std::isnan(iou[c]));
    CHECK(mean_iou(cm) == doctest::Approx(0.6));
    CHECK(pixel_acc(cm) == doctest::Approx(0.75));
}

TEST_CASE("metrics stay in the unit interval") {
    for (uint64_t seed = 20; seed < 30; ++seed) {
        const LabelMask gt = random_mask(16, 16, seed, 3);
        const LabelMask pred = random_mask(16, 16, seed + 100, 5);
        ConfusionMatrix cm;
        accumulate(cm, pred, gt);
        for (double v : {pixel_acc(cm), mean_pixel_acc(cm), mean_iou(cm)}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("relabeling categories permutes per-class IoU and keeps mIoU") {
    const LabelMask gt = random_mask(20, 20, 7);
    const LabelMask pred = random_mask(20, 20, 8);
    ConfusionMatrix cm;
    accumulate(cm, pred, gt);

    const std::array<uint8_t, 6> perm = {3, 5, 0, 1, 4, 2};
    LabelMask gt_p = gt, pred_p = pred;
    for (auto& v : gt_p.pixels) v = perm[v];
    for (auto& v : pred_p.pixels) v = perm[v];
    ConfusionMatrix cm_p;
    accumulate(cm_p, pred_p, gt_p);

    const auto iou = per_class_iou(cm);
    const auto iou_p = per_class_iou(cm_p);
    for (int c = 0; c < 6; ++c)
        CHECK(iou_p[perm[c]] == doctest::Approx(iou[c]).epsilon(1e-12));
    CHECK(mean_iou(cm_p) == doctest::Approx(mean_iou(cm)).epsilon(1e-12));
}

TEST_CASE("accumulation is additive over disjoint pixel sets") {
    const LabelMask gt_a = random_mask(12, 12, 31);
    const LabelMask pr_a = random_mask(12, 12, 32);
    const LabelMask gt_b = random_mask(9, 9, 33);
    const LabelMask pr_b = random_mask(9, 9, 34);

    ConfusionMatrix separate_a, separate_b, joint;
    accumulate(separate_a, pr_a, gt_a);
    accumulate(separate_b, pr_b, gt_b);
    accumulate(joint, pr_a, gt_a);
    accumulate(joint, pr_b, gt_b);

    separate_a += separate_b;
    for (int g = 0; g < 6; ++g)
        for (int p = 0; p < 6; ++p) CHECK(separate_a.at(g, p) == joint.at(g, p));
}

TEST_CASE("empty matrices raise instead of dividing by zero") {
    ConfusionMatrix cm;
    CHECK_THROWS_AS(pixel_acc(cm), ValidationError);
    CHECK_THROWS_AS(mean_iou(cm), ValidationError);
    CHECK_THROWS_AS(per_class_iou(cm), ValidationError);
}

TEST_CASE("the report follows the evaluation column order") {
    const LabelMask m = random_mask(16, 16, 40);
    ConfusionMatrix cm;
    accumulate(cm, m, m);
    const std::string report = format_report(cm, "ours");

    size_t pos = 0;
    for (const char* col : {"background", "parking", "white-solid", "white-dashed",
                            "yellow-solid", "yellow-dashed", "pacc", "mIoU"}) {
        const size_t found = report.find(col, pos);
        REQUIRE(found != std::string::npos);
        pos = found;
    }
    CHECK(report.find("100.00") != std::string::npos);
}
