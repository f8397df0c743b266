#include "cil/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cil/error.hpp"

namespace cil {

F1Result macro_f1(const Matrix& scores, const Matrix& targets, double threshold) {
    require_same_size(scores.rows(), targets.rows(), "macro_f1 rows");
    require_same_size(scores.cols(), targets.cols(), "macro_f1 cols");
    F1Result out;
    out.per_class.assign(scores.cols(), 0.0);
    for (std::size_t c = 0; c < scores.cols(); ++c) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t r = 0; r < scores.rows(); ++r) {
            const bool pred = scores(r, c) >= threshold;
            const bool truth = targets(r, c) > 0.5;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
        }
        const std::size_t denom = 2 * tp + fp + fn;
        out.per_class[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }
    if (!out.per_class.empty()) {
        out.macro = std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) /
                    static_cast<double>(out.per_class.size());
    }
    return out;
}

APResult mean_average_precision(const Matrix& scores, const Matrix& targets) {
    require_same_size(scores.rows(), targets.rows(), "mean_average_precision rows");
    require_same_size(scores.cols(), targets.cols(), "mean_average_precision cols");
    APResult out;
    out.per_class.resize(scores.cols());
    std::vector<std::size_t> order(scores.rows());
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < scores.cols(); ++c) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores(a, c) > scores(b, c);
        });
        std::size_t hits = 0;
        double ap = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (targets(order[k], c) > 0.5) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(k + 1);
            }
        }
        if (hits == 0) continue;
        ap /= static_cast<double>(hits);
        out.per_class[c] = ap;
        sum += ap;
        ++present;
    }
    out.map = present == 0 ? 0.0 : sum / static_cast<double>(present);
    return out;
}

double macro_f1_over(const PhaseReport& report, std::span<const int> class_ids) {
    if (class_ids.empty()) throw ConfigError("macro_f1_over: empty class list");
    double s = 0.0;
    for (int c : class_ids) {
        const auto it = std::find(report.classes.begin(), report.classes.end(), c);
        if (it == report.classes.end()) {
            throw ConfigError("phase " + std::to_string(report.phase) + " report lacks class " +
                              std::to_string(c));
        }
        s += report.per_class_f1[static_cast<std::size_t>(it - report.classes.begin())];
    }
    return s / static_cast<double>(class_ids.size());
}

double forgetting(const PhaseReport& base_report, const PhaseReport& current,
                  std::span<const int> base_classes) {
    return 100.0 * (macro_f1_over(base_report, base_classes) - macro_f1_over(current, base_classes));
}

RunSummary average_over_phases(std::span<const PhaseReport> reports) {
    if (reports.empty()) throw ConfigError("average_over_phases: no reports");
    RunSummary s;
    double fr_sum = 0.0;
    std::size_t fr_n = 0;
    for (const auto& r : reports) {
        s.avg_f1 += r.macro_f1;
        s.avg_map += r.map;
        if (r.phase >= 1 && r.fr) {
            fr_sum += *r.fr;
            ++fr_n;
        }
    }
    s.avg_f1 /= static_cast<double>(reports.size());
    s.avg_map /= static_cast<double>(reports.size());
    if (fr_n > 0) s.avg_fr = fr_sum / static_cast<double>(fr_n);
    return s;
}

}  // namespace cil
