#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dbt/stats.hpp"

namespace dbt {

void validate(const CaseRecord& c) {
    if (!std::isfinite(c.score)) throw std::invalid_argument("case " + c.case_id + ": non-finite score");
    if (c.tumor_size_mm) {
        if (!c.label) throw std::invalid_argument("case " + c.case_id + ": tumor size given for a non-cancer");
        if (!(*c.tumor_size_mm > 0.0)) throw std::invalid_argument("case " + c.case_id + ": tumor size must be > 0");
    }
    for (const auto& [reader, birads] : c.reader_birads) {
        if (birads < 1 || birads > 5) {
            throw std::invalid_argument("case " + c.case_id + ": BIRADS " + std::to_string(birads) + " from reader " +
                                        reader + " outside 1..5");
        }
    }
}

RocAnalysis roc_from_scores(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("roc: scores/labels length mismatch");
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc: both classes required");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocAnalysis roc;
    roc.n_positive = n_pos;
    roc.n_negative = n_neg;
    roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});

    // Twice the area in units of (1/P)(1/N), accumulated exactly.
    std::uint64_t area2 = 0;
    std::uint64_t tp = 0, fp = 0;
    const auto p = static_cast<double>(n_pos);
    const auto n = static_cast<double>(n_neg);
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        const std::uint64_t tp_prev = tp, fp_prev = fp;
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        area2 += (fp - fp_prev) * (tp + tp_prev);
        roc.points.push_back({t, static_cast<double>(tp) / p, 1.0 - static_cast<double>(fp) / n});
    }
    roc.auc = static_cast<double>(area2) / (2.0 * p * n);
    return roc;
}

RocAnalysis roc_and_auc(std::span<const CaseRecord> cases) {
    std::vector<double> scores;
    std::vector<bool> labels;
    scores.reserve(cases.size());
    for (const auto& c : cases) {
        validate(c);
        scores.push_back(c.score);
        labels.push_back(c.label);
    }
    return roc_from_scores(scores, labels);
}

double trapezoid_auc(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double dx = points[i - 1].specificity - points[i].specificity;
        area += dx * 0.5 * (points[i].sensitivity + points[i - 1].sensitivity);
    }
    return area;
}

std::optional<double> auc_of_indices(std::span<const double> scores, const std::vector<bool>& labels,
                                     std::span<const std::size_t> idx) {
    struct Item {
        double score;
        bool label;
    };
    std::vector<Item> items;
    items.reserve(idx.size());
    std::size_t n_pos = 0;
    for (std::size_t i : idx) {
        items.push_back({scores[i], labels[i]});
        n_pos += labels[i] ? 1 : 0;
    }
    const std::size_t n_neg = items.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    // Sum of doubled midranks of the positives keeps everything integral.
    std::uint64_t rank2_sum = 0;
    for (std::size_t i = 0; i < items.size();) {
        std::size_t j = i;
        std::size_t pos_in_group = 0;
        while (j < items.size() && items[j].score == items[i].score) {
            pos_in_group += items[j].label ? 1 : 0;
            ++j;
        }
        const std::uint64_t midrank2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
        rank2_sum += midrank2 * pos_in_group;
        i = j;
    }
    const auto p = static_cast<double>(n_pos);
    const auto n = static_cast<double>(n_neg);
    const double u2 = static_cast<double>(rank2_sum) - p * (p + 1.0);
    return u2 / (2.0 * p * n);
}

double sensitivity_at_specificity(const RocAnalysis& roc, double target) {
    const auto& pts = roc.points;
    if (pts.empty()) throw std::invalid_argument("sensitivity_at_specificity: empty curve");
    target = std::clamp(target, 0.0, 1.0);
    // Last point still meeting the target specificity carries the highest
    // sensitivity available at that specificity.
    std::size_t i = 0;
    while (i + 1 < pts.size() && pts[i + 1].specificity >= target) ++i;
    if (pts[i].specificity == target || i + 1 == pts.size()) return pts[i].sensitivity;
    const auto& a = pts[i];
    const auto& b = pts[i + 1];
    const double t = (a.specificity - target) / (a.specificity - b.specificity);
    return a.sensitivity + t * (b.sensitivity - a.sensitivity);
}

double specificity_at_sensitivity(const RocAnalysis& roc, double target) {
    const auto& pts = roc.points;
    if (pts.empty()) throw std::invalid_argument("specificity_at_sensitivity: empty curve");
    target = std::clamp(target, 0.0, 1.0);
    std::size_t i = 0;
    while (i < pts.size() && pts[i].sensitivity < target) ++i;
    if (i == pts.size()) return pts.back().specificity;
    if (pts[i].sensitivity == target || i == 0) return pts[i].specificity;
    const auto& a = pts[i - 1];
    const auto& b = pts[i];
    const double t = (target - a.sensitivity) / (b.sensitivity - a.sensitivity);
    return a.specificity + t * (b.specificity - a.specificity);
}

}  // namespace dbt
