#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "psv/image.hpp"

namespace psv {

inline constexpr int kNumClasses = 6;

// Category codes of the label masks.
enum : uint8_t {
    kBackground = 0,
    kParkingSlot = 1,
    kWhiteSolid = 2,
    kWhiteDashed = 3,
    kYellowSolid = 4,
    kYellowDashed = 5,
};

// Table-style category names, index 0..5.
const char* class_name(int category);

// entry(g, p) = pixels with ground truth g predicted p.
struct ConfusionMatrix {
    std::array<uint64_t, kNumClasses * kNumClasses> counts{};

    uint64_t& at(int gt, int pred) { return counts[gt * kNumClasses + pred]; }
    uint64_t at(int gt, int pred) const { return counts[gt * kNumClasses + pred]; }
    uint64_t total() const;
    uint64_t row_sum(int gt) const;
    uint64_t col_sum(int pred) const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

void accumulate(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& gt);

double pixel_acc(const ConfusionMatrix& cm);
double mean_pixel_acc(const ConfusionMatrix& cm);
double mean_iou(const ConfusionMatrix& cm);
// NaN for categories absent from both ground truth and prediction.
std::array<double, kNumClasses> per_class_iou(const ConfusionMatrix& cm);

// Text table mirroring the evaluation column order:
// background .. yellow-dashed, pacc, mIoU (percentages).
std::string format_report(const ConfusionMatrix& cm, const std::string& row_label);

}  // namespace psv
