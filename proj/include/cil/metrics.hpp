#pragma once

// Multi-label evaluation: macro F1 at a fixed threshold, mean average
// precision, and forgetting on the base-phase classes.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "cil/gradcore.hpp"

namespace cil {

struct F1Result {
    Vector per_class;
    double macro = 0.0;
};

// Prediction = score >= threshold; F1 = 2TP / (2TP + FP + FN), 0 when the
// denominator is 0. Columns are classes, rows examples.
F1Result macro_f1(const Matrix& scores, const Matrix& targets, double threshold = 0.5);

struct APResult {
    std::vector<std::optional<double>> per_class;  // absent when a class has no positives
    double map = 0.0;                             // mean over present classes, 0 if none
};

// Non-interpolated AP over the ranking by descending score; ties keep
// example order.
APResult mean_average_precision(const Matrix& scores, const Matrix& targets);

struct PhaseReport {
    int phase = 0;
    std::vector<int> classes;  // evaluated class IDs, learner output order
    Vector per_class_f1;
    double macro_f1 = 0.0;
    std::vector<std::optional<double>> per_class_ap;
    double map = 0.0;
    std::optional<double> fr;      // percentage points; absent at phase 0
    std::optional<double> lambda;  // OD weight used in this phase, if any
    Vector weight_norms;
    std::map<std::size_t, std::size_t> labels_histogram;
    bool incremental = true;
};

// Mean per-class F1 over the given class IDs; ConfigError if one is missing.
double macro_f1_over(const PhaseReport& report, std::span<const int> class_ids);

// 100 * (base macro F1 - current macro F1) over base_classes.
double forgetting(const PhaseReport& base_report, const PhaseReport& current,
                  std::span<const int> base_classes);

struct RunSummary {
    double avg_f1 = 0.0;
    double avg_map = 0.0;
    std::optional<double> avg_fr;  // over phases >= 1 that carry fr
};

RunSummary average_over_phases(std::span<const PhaseReport> reports);

}  // namespace cil
