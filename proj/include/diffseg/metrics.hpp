#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "diffseg/common.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

/// Per-class confusion counts. Entry (i, j) counts pixels with ground truth
/// class i predicted as class j. Matrices are additive, so shards may be
/// accumulated independently and summed.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes)
        : num_classes_(num_classes),
          counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
        if (num_classes < 1) throw InvalidParameterError("ConfusionMatrix: need at least one class");
    }

    int num_classes() const { return num_classes_; }

    std::uint64_t count(int truth, int predicted) const {
        return counts_[static_cast<std::size_t>(truth) * num_classes_ + predicted];
    }

    void accumulate(const IndexMap& predicted, const IndexMap& truth) {
        if (!predicted.same_shape(truth)) throw ValidationError("accumulate: prediction/truth shape mismatch");
        for (std::size_t i = 0; i < truth.data.size(); ++i) {
            const std::int32_t t = truth.data[i];
            const std::int32_t p = predicted.data[i];
            if (t < 0 || t >= num_classes_ || p < 0 || p >= num_classes_) {
                throw ValidationError("accumulate: class index out of range at pixel " + std::to_string(i));
            }
            ++counts_[static_cast<std::size_t>(t) * num_classes_ + p];
        }
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (o.num_classes_ != num_classes_) throw ValidationError("ConfusionMatrix: class count mismatch");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
        return *this;
    }

    std::uint64_t true_positives(int c) const { return count(c, c); }

    std::uint64_t false_positives(int c) const {
        std::uint64_t s = 0;
        for (int i = 0; i < num_classes_; ++i) {
            if (i != c) s += count(i, c);
        }
        return s;
    }

    std::uint64_t false_negatives(int c) const {
        std::uint64_t s = 0;
        for (int j = 0; j < num_classes_; ++j) {
            if (j != c) s += count(c, j);
        }
        return s;
    }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts_) s += v;
        return s;
    }

private:
    int num_classes_;
    std::vector<std::uint64_t> counts_;
};

/// IoU = TP / (TP + FP + FN). Empty when the class appears in neither truth
/// nor prediction; such classes are excluded from the mIoU mean.
inline std::optional<double> iou(const ConfusionMatrix& cm, int c) {
    const std::uint64_t tp = cm.true_positives(c);
    const std::uint64_t denom = tp + cm.false_positives(c) + cm.false_negatives(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(denom);
}

/// Unweighted mean of per-class IoU over the classes present.
inline double miou(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < cm.num_classes(); ++c) {
        if (auto v = iou(cm, c)) {
            sum += *v;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// F1 = 2 TP / (2 TP + FP + FN); empty for absent classes.
inline std::optional<double> f1(const ConfusionMatrix& cm, int c) {
    const std::uint64_t tp = cm.true_positives(c);
    const std::uint64_t denom = 2 * tp + cm.false_positives(c) + cm.false_negatives(c);
    if (denom == 0) return std::nullopt;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

/// Macro-averaged F1 over present classes.
inline double macro_f1(const ConfusionMatrix& cm) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < cm.num_classes(); ++c) {
        if (auto v = f1(cm, c)) {
            sum += *v;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Aligned plain-text table: one row per class plus summary lines. Absent
/// classes are flagged and excluded from the means.
inline std::string metrics_text_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "class" << std::right << std::setw(10) << "IoU" << std::setw(10) << "F1"
       << "\n";
    for (int c = 0; c < cm.num_classes(); ++c) {
        const std::string name =
            c < static_cast<int>(class_names.size()) ? class_names[c] : "class" + std::to_string(c);
        os << std::left << std::setw(16) << name << std::right;
        const auto i = iou(cm, c);
        const auto f = f1(cm, c);
        if (i) {
            os << std::setw(10) << std::fixed << std::setprecision(4) << *i << std::setw(10) << *f << "\n";
        } else {
            os << std::setw(10) << "absent" << std::setw(10) << "absent"
               << "\n";
        }
    }
    os << std::left << std::setw(16) << "mIoU" << std::right << std::setw(10) << std::fixed << std::setprecision(4)
       << miou(cm) << "\n";
    os << std::left << std::setw(16) << "macro-F1" << std::right << std::setw(10) << std::fixed
       << std::setprecision(4) << macro_f1(cm) << "\n";
    return os.str();
}

/// Machine-readable key-value lines: iou.<name>=<v>, f1.<name>=<v>, miou=...
inline std::string metrics_kv_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (int c = 0; c < cm.num_classes(); ++c) {
        const std::string name =
            c < static_cast<int>(class_names.size()) ? class_names[c] : "class" + std::to_string(c);
        const auto i = iou(cm, c);
        const auto f = f1(cm, c);
        os << "iou." << name << "=" << (i ? std::to_string(*i) : "absent") << "\n";
        os << "f1." << name << "=" << (f ? std::to_string(*f) : "absent") << "\n";
    }
    os << "miou=" << miou(cm) << "\n";
    os << "macro_f1=" << macro_f1(cm) << "\n";
    return os.str();
}

}  // namespace diffseg
