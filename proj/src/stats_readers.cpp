#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "dbt/stats.hpp"

namespace dbt {

namespace {

OperatingPoint tally(std::span<const CaseRecord> cases, const std::vector<char>& recalled) {
    std::size_t pos = 0, neg = 0, tp = 0, tn = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        if (cases[i].label) {
            ++pos;
            tp += recalled[i] ? 1 : 0;
        } else {
            ++neg;
            tn += recalled[i] ? 0 : 1;
        }
    }
    if (pos == 0 || neg == 0) throw std::invalid_argument("reader operating point: both classes required");
    return {static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(tn) / static_cast<double>(neg)};
}

int birads_of(const CaseRecord& c, const std::string& reader) {
    const auto it = c.reader_birads.find(reader);
    if (it == c.reader_birads.end()) {
        throw std::invalid_argument("reader " + reader + " has no read for case " + c.case_id);
    }
    if (it->second < 1 || it->second > 5) {
        throw std::invalid_argument("case " + c.case_id + ": BIRADS " + std::to_string(it->second) + " outside 1..5");
    }
    return it->second;
}

}  // namespace

OperatingPoint reader_operating_point(std::span<const CaseRecord> cases, const std::string& reader_id) {
    std::vector<char> recalled(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) recalled[i] = birads_of(cases[i], reader_id) >= kRecallBirads;
    return tally(cases, recalled);
}

OperatingPoint reader_panel_combine(std::span<const CaseRecord> cases, std::span<const std::string> readers) {
    if (readers.empty()) throw std::invalid_argument("reader_panel_combine: empty reader subset");
    const auto k = static_cast<int>(readers.size());
    std::vector<char> recalled(cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        int sum = 0;
        for (const auto& r : readers) sum += birads_of(cases[i], r);
        // mean >= 3  <=>  sum >= 3k, exact in integers
        recalled[i] = sum >= kRecallBirads * k;
    }
    return tally(cases, recalled);
}

std::vector<PanelPoint> enumerate_panels(std::span<const CaseRecord> cases, std::span<const std::string> readers,
                                         std::size_t min_size, std::size_t max_size) {
    const std::size_t k = readers.size();
    if (max_size == 0 || max_size > k) max_size = k;
    if (min_size == 0) min_size = 1;
    std::vector<PanelPoint> out;
    for (std::size_t size = min_size; size <= max_size; ++size) {
        // Walk combinations in lexicographic order of reader positions.
        std::vector<std::size_t> pick(size);
        for (std::size_t i = 0; i < size; ++i) pick[i] = i;
        for (;;) {
            PanelPoint p;
            for (std::size_t i : pick) p.readers.push_back(readers[i]);
            p.point = reader_panel_combine(cases, p.readers);
            out.push_back(std::move(p));

            std::size_t pos = size;
            while (pos > 0 && pick[pos - 1] == k - size + pos - 1) --pos;
            if (pos == 0) break;
            ++pick[pos - 1];
            for (std::size_t i = pos; i < size; ++i) pick[i] = pick[i - 1] + 1;
        }
    }
    return out;
}

std::vector<std::string> reader_ids(std::span<const CaseRecord> cases) {
    std::set<std::string> ids;
    for (const auto& c : cases) {
        for (const auto& [r, b] : c.reader_birads) ids.insert(r);
    }
    return {ids.begin(), ids.end()};
}

}  // namespace dbt
