#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dbt/common.hpp"
#include "dbt/stats.hpp"

namespace dbt {

namespace {

enum StreamKey : std::uint64_t {
    kBootstrapStream = 0xB0075,
    kPopulationStream = 0x5123,
};

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v, double mean) {
    if (v.size() < 2) return 0.0;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

double percentile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("percentile of empty data");
    const double h = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BootstrapResult bootstrap_ci(std::size_t n_cases, const ResampleMetric& metric, const BootstrapOptions& opts) {
    if (n_cases == 0) throw std::invalid_argument("bootstrap_ci: no cases");
    if (opts.n_resamples == 0) throw std::invalid_argument("bootstrap_ci: n_resamples must be >= 1");
    if (!(opts.confidence > 0.0 && opts.confidence < 1.0)) throw std::invalid_argument("bootstrap_ci: confidence in (0, 1)");

    std::vector<std::size_t> all(n_cases);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto point = metric(all);
    if (!point) throw NumericError("bootstrap_ci: metric undefined on the full data");

    const auto max_redraws =
        static_cast<std::size_t>(std::floor(opts.max_undefined_fraction * static_cast<double>(opts.n_resamples)));

    BootstrapResult res;
    res.point = *point;
    res.replicates.assign(opts.n_resamples, 0.0);
    std::vector<std::size_t> redraws(opts.n_resamples, 0);

    parallel_for(opts.n_resamples, [&](std::size_t r) {
        std::vector<std::size_t> idx(n_cases);
        for (std::size_t attempt = 0;; ++attempt) {
            if (attempt > max_redraws) {
                throw NumericError("bootstrap_ci: metric undefined on more than " +
                                   std::to_string(opts.max_undefined_fraction * 100.0) + "% of resamples");
            }
            Rng rng(derive_seed(opts.seed, kBootstrapStream, r, attempt));
            for (auto& i : idx) i = rng.below(n_cases);
            if (const auto v = metric(idx)) {
                res.replicates[r] = *v;
                redraws[r] = attempt;
                return;
            }
        }
    });

    res.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
    if (res.redraws > max_redraws) {
        throw NumericError("bootstrap_ci: metric undefined on " + std::to_string(res.redraws) + " of " +
                           std::to_string(opts.n_resamples + res.redraws) + " draws");
    }

    std::vector<double> sorted = res.replicates;
    std::sort(sorted.begin(), sorted.end());
    const double alpha = 1.0 - opts.confidence;
    res.lo = percentile_sorted(sorted, 0.5 * alpha);
    res.hi = percentile_sorted(sorted, 1.0 - 0.5 * alpha);
    res.mean = mean_of(res.replicates);
    res.sd = sd_of(res.replicates, res.mean);
    return res;
}

BootstrapResult bootstrap_ci(std::span<const CaseRecord> cases,
                             const std::function<std::optional<double>(std::span<const CaseRecord>)>& metric,
                             const BootstrapOptions& opts) {
    return bootstrap_ci(
        cases.size(),
        [&](std::span<const std::size_t> idx) {
            std::vector<CaseRecord> sample;
            sample.reserve(idx.size());
            for (std::size_t i : idx) sample.push_back(cases[i]);
            return metric(sample);
        },
        opts);
}

BootstrapResult bootstrap_auc(std::span<const CaseRecord> cases, const BootstrapOptions& opts) {
    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& c : cases) {
        validate(c);
        scores.push_back(c.score);
        labels.push_back(c.label);
    }
    return bootstrap_ci(
        cases.size(), [&](std::span<const std::size_t> idx) { return auc_of_indices(scores, labels, idx); }, opts);
}

// ---- model vs readers ------------------------------------------------------

PairedComparison paired_delta_pvalue(std::span<const CaseRecord> cases, std::span<const std::string> readers,
                                     MatchedMetric metric, const BootstrapOptions& opts) {
    if (readers.empty()) throw std::invalid_argument("paired_delta_pvalue: no readers");
    const std::size_t n = cases.size();
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    // recall[r][i]: reader r recalls case i.
    std::vector<std::vector<char>> recall(readers.size(), std::vector<char>(n));
    for (std::size_t i = 0; i < n; ++i) {
        validate(cases[i]);
        scores[i] = cases[i].score;
        labels[i] = cases[i].label;
        for (std::size_t r = 0; r < readers.size(); ++r) {
            const auto it = cases[i].reader_birads.find(readers[r]);
            if (it == cases[i].reader_birads.end()) {
                throw std::invalid_argument("paired_delta_pvalue: reader " + readers[r] + " did not read case " +
                                            cases[i].case_id);
            }
            recall[r][i] = it->second >= kRecallBirads ? 1 : 0;
        }
    }

    struct Eval {
        double model;
        double reader;
    };
    auto evaluate = [&](std::span<const std::size_t> idx) -> std::optional<Eval> {
        std::vector<double> s;
        std::vector<bool> l;
        s.reserve(idx.size());
        l.reserve(idx.size());
        std::size_t n_pos = 0;
        for (std::size_t i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
            n_pos += labels[i] ? 1 : 0;
        }
        const std::size_t n_neg = idx.size() - n_pos;
        if (n_pos == 0 || n_neg == 0) return std::nullopt;

        double sens_sum = 0.0, spec_sum = 0.0;
        for (const auto& rec : recall) {
            std::size_t tp = 0, tn = 0;
            for (std::size_t i : idx) {
                if (labels[i]) tp += rec[i] ? 1 : 0;
                else tn += rec[i] ? 0 : 1;
            }
            sens_sum += static_cast<double>(tp) / static_cast<double>(n_pos);
            spec_sum += static_cast<double>(tn) / static_cast<double>(n_neg);
        }
        const double k = static_cast<double>(recall.size());
        const double reader_sens = sens_sum / k;
        const double reader_spec = spec_sum / k;
        const RocAnalysis roc = roc_from_scores(s, l);
        if (metric == MatchedMetric::Sensitivity) return Eval{sensitivity_at_specificity(roc, reader_spec), reader_sens};
        return Eval{specificity_at_sensitivity(roc, reader_sens), reader_spec};
    };

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto full = evaluate(all);
    if (!full) throw std::invalid_argument("paired_delta_pvalue: both classes required");

    const BootstrapResult boot = bootstrap_ci(
        n,
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
            const auto e = evaluate(idx);
            if (!e) return std::nullopt;
            return e->model - e->reader;
        },
        opts);

    PairedComparison out;
    out.model_value = full->model;
    out.reader_value = full->reader;
    out.delta = full->model - full->reader;
    out.ci_lo = boot.lo;
    out.ci_hi = boot.hi;
    out.redraws = boot.redraws;
    double below = 0.0;
    for (double d : boot.replicates) {
        if (d < 0.0) below += 1.0;
        else if (d == 0.0) below += 0.5;
    }
    out.p_value = below / static_cast<double>(boot.replicates.size());
    return out;
}

// ---- tumor-size matched resampling ----------------------------------------

std::vector<double> default_size_edges() { return {10.0, 20.0, 50.0}; }

std::size_t SizeHistogram::bin_of(double size_mm) const {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), size_mm) - edges.begin());
}

void SizeHistogram::validate() const {
    if (!std::is_sorted(edges.begin(), edges.end()) ||
        std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
        throw ConfigError("size histogram: edges must be strictly increasing");
    }
    if (shares.size() != bin_count()) {
        throw ConfigError("size histogram: " + std::to_string(bin_count()) + " bins need as many shares, got " +
                          std::to_string(shares.size()));
    }
    double total = 0.0;
    for (double s : shares) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("size histogram: shares must be finite and >= 0");
        total += s;
    }
    if (!(total > 0.0)) throw ConfigError("size histogram: shares sum to zero");
}

std::vector<double> SizeHistogram::normalized() const {
    validate();
    const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
    std::vector<double> out = shares;
    for (double& s : out) s /= total;
    return out;
}

std::vector<double> source_size_shares(std::span<const CaseRecord> cases, const SizeHistogram& bins) {
    std::vector<double> counts(bins.bin_count(), 0.0);
    double total = 0.0;
    for (const auto& c : cases) {
        if (!c.label) continue;
        if (!c.tumor_size_mm) throw std::invalid_argument("case " + c.case_id + ": cancer without a tumor size");
        counts[bins.bin_of(*c.tumor_size_mm)] += 1.0;
        total += 1.0;
    }
    if (total > 0.0) {
        for (double& v : counts) v /= total;
    }
    return counts;
}

SizeMatchedResult size_matched_auc(std::span<const CaseRecord> cases, const SizeHistogram& target,
                                   std::size_t n_populations, std::uint64_t seed) {
    if (n_populations == 0) throw std::invalid_argument("size_matched_auc: n_populations must be >= 1");
    const std::vector<double> target_shares = target.normalized();

    std::vector<double> scores;
    std::vector<bool> labels;
    std::vector<std::vector<std::size_t>> pos_by_bin(target.bin_count());
    std::vector<std::size_t> negatives;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const auto& c = cases[i];
        validate(c);
        scores.push_back(c.score);
        labels.push_back(c.label);
        if (!c.label) {
            negatives.push_back(i);
            continue;
        }
        if (!c.tumor_size_mm) throw std::invalid_argument("size_matched_auc: cancer " + c.case_id + " has no tumor size");
        pos_by_bin[target.bin_of(*c.tumor_size_mm)].push_back(i);
    }
    std::size_t n_pos = 0;
    for (std::size_t b = 0; b < pos_by_bin.size(); ++b) {
        n_pos += pos_by_bin[b].size();
        if (target_shares[b] > 0.0 && pos_by_bin[b].empty()) {
            throw ConfigError("size_matched_auc: target puts mass " + std::to_string(target_shares[b]) + " on bin " +
                              std::to_string(b) + " but no cancer falls in it");
        }
    }
    if (n_pos == 0 || negatives.empty()) throw std::invalid_argument("size_matched_auc: both classes required");

    std::vector<double> cumulative(target_shares.size());
    std::partial_sum(target_shares.begin(), target_shares.end(), cumulative.begin());
    cumulative.back() = 1.0;

    std::vector<double> aucs(n_populations);
    std::vector<double> tvs(n_populations);
    parallel_for(n_populations, [&](std::size_t pop) {
        Rng rng(derive_seed(seed, kPopulationStream, pop));
        std::vector<std::size_t> idx;
        idx.reserve(n_pos + negatives.size());
        std::vector<double> drawn(target_shares.size(), 0.0);
        for (std::size_t k = 0; k < n_pos; ++k) {
            const double u = rng.uniform();
            auto b = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                              cumulative.begin());
            b = std::min(b, cumulative.size() - 1);
            while (pos_by_bin[b].empty() && b > 0) --b;  // zero-share tail bin picked by rounding
            idx.push_back(pos_by_bin[b][rng.below(pos_by_bin[b].size())]);
            drawn[b] += 1.0;
        }
        for (std::size_t k = 0; k < negatives.size(); ++k) idx.push_back(negatives[rng.below(negatives.size())]);
        aucs[pop] = *auc_of_indices(scores, labels, idx);
        double tv = 0.0;
        for (std::size_t b = 0; b < drawn.size(); ++b) tv += std::abs(drawn[b] / static_cast<double>(n_pos) - target_shares[b]);
        tvs[pop] = 0.5 * tv;
    });

    SizeMatchedResult out;
    out.n_populations = n_populations;
    out.mean_auc = mean_of(aucs);
    out.sd_auc = sd_of(aucs, out.mean_auc);
    out.mean_tv_distance = mean_of(tvs);
    out.source_shares = source_size_shares(cases, target);
    out.target_shares = target_shares;
    return out;
}

}  // namespace dbt
