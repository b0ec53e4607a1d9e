#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dbt/stats.hpp"

namespace dbt {

namespace {

// Midranks (1-based, ties averaged) of `v`.
std::vector<double> midranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

struct Components {
    std::vector<double> v10;  // one per positive
    std::vector<double> v01;  // one per negative
    double auc = 0.0;
};

// Structural components via midranks: V10_i is the share of negatives the
// i-th positive beats (ties half), V01_j the share of positives beating the
// j-th negative.
Components structural_components(std::span<const double> pos, std::span<const double> neg) {
    const std::size_t m = pos.size();
    const std::size_t n = neg.size();
    std::vector<double> combined(pos.begin(), pos.end());
    combined.insert(combined.end(), neg.begin(), neg.end());
    const auto tz = midranks(combined);
    const auto tx = midranks(pos);
    const auto ty = midranks(neg);

    Components c;
    c.v10.resize(m);
    c.v01.resize(n);
    for (std::size_t i = 0; i < m; ++i) c.v10[i] = (tz[i] - tx[i]) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) c.v01[j] = 1.0 - (tz[m + j] - ty[j]) / static_cast<double>(m);
    c.auc = std::accumulate(c.v10.begin(), c.v10.end(), 0.0) / static_cast<double>(m);
    return c;
}

double covariance(std::span<const double> a, std::span<const double> b) {
    const auto n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / (n - 1.0);
}

}  // namespace

DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         const std::vector<bool>& labels) {
    if (scores_a.size() != labels.size() || scores_b.size() != labels.size()) {
        throw std::invalid_argument("delong_test: scores and labels must be paired");
    }
    std::vector<double> pos_a, neg_a, pos_b, neg_b;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(scores_a[i]) || !std::isfinite(scores_b[i])) throw std::invalid_argument("delong_test: non-finite score");
        (labels[i] ? pos_a : neg_a).push_back(scores_a[i]);
        (labels[i] ? pos_b : neg_b).push_back(scores_b[i]);
    }
    if (pos_a.size() < 2 || neg_a.size() < 2) {
        throw std::invalid_argument("delong_test: at least two cases of each class required");
    }

    const Components a = structural_components(pos_a, neg_a);
    const Components b = structural_components(pos_b, neg_b);
    const auto m = static_cast<double>(pos_a.size());
    const auto n = static_cast<double>(neg_a.size());

    DeLongResult r;
    r.auc_a = a.auc;
    r.auc_b = b.auc;
    r.var_a = covariance(a.v10, a.v10) / m + covariance(a.v01, a.v01) / n;
    r.var_b = covariance(b.v10, b.v10) / m + covariance(b.v01, b.v01) / n;
    r.cov_ab = covariance(a.v10, b.v10) / m + covariance(a.v01, b.v01) / n;
    r.var_diff = r.var_a + r.var_b - 2.0 * r.cov_ab;

    const double diff = r.auc_a - r.auc_b;
    if (diff == 0.0) {
        r.z = 0.0;
        r.p = 1.0;
    } else if (!(r.var_diff > 0.0)) {
        r.degenerate = true;
        r.z = std::numeric_limits<double>::quiet_NaN();
        r.p = std::numeric_limits<double>::quiet_NaN();
    } else {
        r.z = diff / std::sqrt(r.var_diff);
        r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    }
    return r;
}

}  // namespace dbt
