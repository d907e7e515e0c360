#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskmatch/error.hpp"

namespace maskmatch {

enum class Metric { kAccuracy, kMicroF1, kMacroF1 };

inline constexpr std::array<Metric, 3> kAllMetrics = {Metric::kAccuracy, Metric::kMicroF1, Metric::kMacroF1};

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::kAccuracy: return "accuracy";
        case Metric::kMicroF1: return "micro_f1";
        case Metric::kMacroF1: return "macro_f1";
    }
    return "?";
}

inline Metric parse_metric(std::string_view s) {
    for (auto m : kAllMetrics)
        if (to_string(m) == s) return m;
    fail(ErrorKind::kConfig, "unknown metric '" + std::string(s) + "' (expected accuracy, micro_f1 or macro_f1)");
}

struct ClassCounts {
    std::size_t tp = 0, fp = 0, fn = 0;

    // 2PR/(P+R) written as one division so hand-counted fractions compare exactly.
    double f1() const {
        const std::size_t denom = 2 * tp + fp + fn;
        return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
    }
};

inline void check_lengths(std::span<const std::size_t> pred, std::span<const std::size_t> gold) {
    if (pred.size() != gold.size()) {
        fail(ErrorKind::kContract, std::to_string(pred.size()) + " predictions for " + std::to_string(gold.size()) +
                                       " gold labels");
    }
    if (gold.empty()) fail(ErrorKind::kContract, "cannot score an empty split");
}

inline std::vector<ClassCounts> class_counts(std::span<const std::size_t> pred, std::span<const std::size_t> gold,
                                             std::size_t classes) {
    check_lengths(pred, gold);
    std::vector<ClassCounts> counts(classes);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= classes || gold[i] >= classes) {
            fail(ErrorKind::kIndex, "label index outside " + std::to_string(classes) + " classes");
        }
        if (pred[i] == gold[i]) {
            ++counts[gold[i]].tp;
        } else {
            ++counts[pred[i]].fp;
            ++counts[gold[i]].fn;
        }
    }
    return counts;
}

inline double accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> gold) {
    check_lengths(pred, gold);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
    return static_cast<double>(correct) / static_cast<double>(gold.size());
}

// F1 over TP/FP/FN pooled across classes.
inline double micro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> gold, std::size_t classes) {
    ClassCounts total;
    for (const auto& c : class_counts(pred, gold, classes)) {
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn += c.fn;
    }
    return total.f1();
}

// Unweighted mean of per-class F1 over classes occurring in gold or pred.
inline double macro_f1(std::span<const std::size_t> pred, std::span<const std::size_t> gold, std::size_t classes) {
    const auto counts = class_counts(pred, gold, classes);
    std::set<std::size_t> present(gold.begin(), gold.end());
    present.insert(pred.begin(), pred.end());
    double sum = 0.0;
    for (std::size_t c : present) sum += counts[c].f1();
    return sum / static_cast<double>(present.size());
}

inline double score(Metric m, std::span<const std::size_t> pred, std::span<const std::size_t> gold,
                    std::size_t classes) {
    switch (m) {
        case Metric::kAccuracy: return accuracy(pred, gold);
        case Metric::kMicroF1: return micro_f1(pred, gold, classes);
        case Metric::kMacroF1: return macro_f1(pred, gold, classes);
    }
    return 0.0;
}

// Single-label scoring must give micro-F1 == accuracy.
inline void check_metric_identity(std::span<const std::size_t> pred, std::span<const std::size_t> gold,
                                  std::size_t classes) {
    const double acc = accuracy(pred, gold);
    const double micro = micro_f1(pred, gold, classes);
    if (std::abs(acc - micro) > 1e-12) {
        fail(ErrorKind::kContract, "micro-F1 " + std::to_string(micro) + " differs from accuracy " + std::to_string(acc));
    }
}

}  // namespace maskmatch
