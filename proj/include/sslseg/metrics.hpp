#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sslseg/feature_map.hpp"

namespace sslseg {

/// Overlap tallies for one class; enough to pool Dice across slices.
struct DiceCounts {
    int64_t intersection = 0;
    int64_t pred_size = 0;
    int64_t truth_size = 0;

    void add(const DiceCounts& o) {
        intersection += o.intersection;
        pred_size += o.pred_size;
        truth_size += o.truth_size;
    }
};

inline DiceCounts dice_counts(const LabelMap& pred, const LabelMap& truth, int cls) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw std::invalid_argument("dice: label shapes differ");
    if (cls < 0 || cls >= kNumClasses) throw std::invalid_argument("dice: class out of range");
    DiceCounts c;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] == cls;
        const bool t = truth.data[i] == cls;
        c.pred_size += p;
        c.truth_size += t;
        c.intersection += p && t;
    }
    return c;
}

/// 2|P∩T| / (|P|+|T|); 1.0 when both masks are empty.
inline double dice_from_counts(const DiceCounts& c) {
    if (c.pred_size + c.truth_size == 0) return 1.0;
    return 2.0 * static_cast<double>(c.intersection) /
           static_cast<double>(c.pred_size + c.truth_size);
}

inline double dice_per_class(const LabelMap& pred, const LabelMap& truth, int cls) {
    return dice_from_counts(dice_counts(pred, truth, cls));
}

/// Foreground Dice rows as reported: RV, MYO, LV, then their mean.
struct DiceReport {
    double per_class[3] = {0.0, 0.0, 0.0};  // classes 1, 2, 3
    double average = 0.0;
    int num_slices = 0;
};

/// Slice-level averaging: Dice per class per slice, then the mean over slices,
/// then the mean of the three foreground classes.
inline DiceReport dice_report_slices(const std::vector<LabelMap>& preds,
                                     const std::vector<LabelMap>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw std::invalid_argument("dice report: need matching non-empty prediction/truth lists");
    DiceReport report;
    report.num_slices = static_cast<int>(preds.size());
    for (int cls = 1; cls < kNumClasses; ++cls) {
        double sum = 0.0;
        for (size_t i = 0; i < preds.size(); ++i)
            sum += dice_per_class(preds[i], truths[i], cls);
        report.per_class[cls - 1] = sum / static_cast<double>(preds.size());
    }
    report.average =
        (report.per_class[0] + report.per_class[1] + report.per_class[2]) / 3.0;
    return report;
}

/// Pixels with no 4-neighbor of the same class: single-pixel islands.
inline int count_isolated_pixels(const LabelMap& labels) {
    int count = 0;
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) {
            const uint8_t v = labels.data[static_cast<size_t>(y) * labels.width + x];
            bool has_same = false;
            if (y > 0 && labels.data[static_cast<size_t>(y - 1) * labels.width + x] == v)
                has_same = true;
            if (!has_same && y + 1 < labels.height &&
                labels.data[static_cast<size_t>(y + 1) * labels.width + x] == v)
                has_same = true;
            if (!has_same && x > 0 &&
                labels.data[static_cast<size_t>(y) * labels.width + x - 1] == v)
                has_same = true;
            if (!has_same && x + 1 < labels.width &&
                labels.data[static_cast<size_t>(y) * labels.width + x + 1] == v)
                has_same = true;
            if (!has_same) ++count;
        }
    return count;
}

}  // namespace sslseg
