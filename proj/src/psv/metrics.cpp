#include "psv/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "psv/error.hpp"

namespace psv {

const char* class_name(int category) {
    static const char* names[kNumClasses] = {"background",   "parking",      "white-solid",
                                             "white-dashed", "yellow-solid", "yellow-dashed"};
    if (category < 0 || category >= kNumClasses)
        throw ValidationError("class_name: category out of range");
    return names[category];
}

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (uint64_t v : counts) t += v;
    return t;
}

uint64_t ConfusionMatrix::row_sum(int gt) const {
    uint64_t t = 0;
    for (int p = 0; p < kNumClasses; ++p) t += at(gt, p);
    return t;
}

uint64_t ConfusionMatrix::col_sum(int pred) const {
    uint64_t t = 0;
    for (int g = 0; g < kNumClasses; ++g) t += at(g, pred);
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& gt) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ValidationError("accumulate: prediction and ground truth sizes differ");
    for (size_t i = 0; i < gt.pixels.size(); ++i) {
        const uint8_t g = gt.pixels[i];
        const uint8_t p = pred.pixels[i];
        if (g >= kNumClasses || p >= kNumClasses)
            throw ValidationError("accumulate: label value out of range 0..5");
        ++cm.at(g, p);
    }
}

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
    if (cm.total() == 0)
        throw ValidationError("metrics undefined on an empty confusion matrix");
}

}  // namespace

double pixel_acc(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    uint64_t diag = 0;
    for (int c = 0; c < kNumClasses; ++c) diag += cm.at(c, c);
    return static_cast<double>(diag) / static_cast<double>(cm.total());
}

double mean_pixel_acc(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    double sum = 0;
    int present = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const uint64_t rs = cm.row_sum(c);
        if (rs == 0) continue;
        sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(rs);
        ++present;
    }
    if (present == 0) throw ValidationError("mean_pixel_acc: no category present");
    return sum / present;
}

std::array<double, kNumClasses> per_class_iou(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    std::array<double, kNumClasses> iou{};
    for (int c = 0; c < kNumClasses; ++c) {
        const uint64_t rs = cm.row_sum(c);
        const uint64_t cs = cm.col_sum(c);
        const uint64_t diag = cm.at(c, c);
        const uint64_t denom = rs + cs - diag;
        iou[c] = denom == 0 ? std::nan("") : static_cast<double>(diag) / static_cast<double>(denom);
    }
    return iou;
}

double mean_iou(const ConfusionMatrix& cm) {
    const auto iou = per_class_iou(cm);
    double sum = 0;
    int present = 0;
    for (double v : iou) {
        if (std::isnan(v)) continue;  // absent from both gt and prediction
        sum += v;
        ++present;
    }
    if (present == 0) throw ValidationError("mean_iou: no category present");
    return sum / present;
}

std::string format_report(const ConfusionMatrix& cm, const std::string& row_label) {
    const auto iou = per_class_iou(cm);
    std::ostringstream os;
    os << std::left << std::setw(14) << "model";
    for (int c = 0; c < kNumClasses; ++c) os << std::setw(15) << class_name(c);
    os << std::setw(8) << "pacc" << std::setw(8) << "mIoU" << "\n";
    os << std::left << std::setw(14) << row_label << std::fixed << std::setprecision(2);
    for (int c = 0; c < kNumClasses; ++c) {
        if (std::isnan(iou[c]))
            os << std::setw(15) << "n/a";
        else
            os << std::setw(15) << iou[c] * 100.0;
    }
    os << std::setw(8) << pixel_acc(cm) * 100.0 << std::setw(8) << mean_iou(cm) * 100.0 << "\n";
    return os.str();
}

}  // namespace psv
