#pragma once
// Slow, obviously-correct reference implementations used to check the
// library. Nothing here calls into the code under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dbt/common.hpp"
#include "dbt/geometry.hpp"

namespace oracle {

inline double box_iou(const dbt::ScoredBox& a, const dbt::ScoredBox& b) {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0 || h <= 0) return 0.0;
    const double inter = w * h;
    const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
    return inter / uni;
}

// Repeatedly scan for the best live box, keep it, kill its overlaps.
inline std::vector<std::size_t> nms(const std::vector<dbt::ScoredBox>& boxes, double thr) {
    std::vector<bool> alive(boxes.size(), true);
    std::vector<std::size_t> kept;
    for (;;) {
        std::size_t best = boxes.size();
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
        }
        if (best == boxes.size()) return kept;
        kept.push_back(best);
        alive[best] = false;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            if (alive[i] && box_iou(boxes[i], boxes[best]) > thr) alive[i] = false;
        }
    }
}

inline std::vector<dbt::ScoredBox> random_boxes(dbt::Rng& rng, std::size_t n, bool coarse_scores) {
    std::vector<dbt::ScoredBox> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.uniform() * 100, y = rng.uniform() * 100;
        const double w = 1 + rng.uniform() * 30, h = 1 + rng.uniform() * 30;
        // coarse scores force plenty of ties
        const double s = coarse_scores ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
        out.push_back({x, y, x + w, y + h, s, std::nullopt});
    }
    return out;
}

// P(pos > neg) + 0.5 P(tie), by counting every pair.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& y) {
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

struct DeLongVar {
    double var_a, var_b, cov, var_diff;
};

// Structural components written out pair by pair.
inline DeLongVar delong_variance(const std::vector<double>& a, const std::vector<double>& b,
                                 const std::vector<bool>& y) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
    const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
    auto psi = [](double p, double q) { return p > q ? 1.0 : (p == q ? 0.5 : 0.0); };
    auto components = [&](const std::vector<double>& s, std::vector<double>& v10, std::vector<double>& v01) {
        v10.assign(pos.size(), 0.0);
        v01.assign(neg.size(), 0.0);
        for (std::size_t i = 0; i < pos.size(); ++i)
            for (std::size_t j = 0; j < neg.size(); ++j) {
                const double k = psi(s[pos[i]], s[neg[j]]);
                v10[i] += k / n;
                v01[j] += k / m;
            }
    };
    std::vector<double> a10, a01, b10, b01;
    components(a, a10, a01);
    components(b, b10, b01);
    auto mean = [](const std::vector<double>& v) {
        double t = 0;
        for (double x : v) t += x;
        return t / static_cast<double>(v.size());
    };
    auto cov = [&](const std::vector<double>& u, const std::vector<double>& v) {
        const double mu = mean(u), mv = mean(v);
        double t = 0;
        for (std::size_t i = 0; i < u.size(); ++i) t += (u[i] - mu) * (v[i] - mv);
        return t / static_cast<double>(u.size() - 1);
    };
    DeLongVar r{};
    r.var_a = cov(a10, a10) / m + cov(a01, a01) / n;
    r.var_b = cov(b10, b10) / m + cov(b01, b01) / n;
    r.cov = cov(a10, b10) / m + cov(a01, b01) / n;
    r.var_diff = r.var_a + r.var_b - 2 * r.cov;
    return r;
}

// One-sample Kolmogorov-Smirnov against U(0, 1); asymptotic p-value.
inline double ks_uniform_pvalue(std::vector<double> u) {
    std::sort(u.begin(), u.end());
    const double n = static_cast<double>(u.size());
    double d = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d = std::max(d, static_cast<double>(i + 1) / n - u[i]);
        d = std::max(d, u[i] - static_cast<double>(i) / n);
    }
    const double t = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
    double p = 0;
    for (int k = 1; k <= 100; ++k) p += 2 * ((k % 2) ? 1 : -1) * std::exp(-2.0 * k * k * t * t);
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace oracle
