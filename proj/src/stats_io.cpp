#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include "dbt/common.hpp"
#include "dbt/geometry.hpp"
#include "dbt/stats.hpp"

namespace dbt {

namespace {

constexpr std::string_view kBiradsPrefix = "birads_";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ConfigError("bad " + what + ": '" + s + "'");
    return v;
}

bool parse_label(const std::string& s) {
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw ConfigError("bad label: '" + s + "'");
}

}  // namespace

std::vector<CaseRecord> read_cases_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "case_id" || header[1] != "label" || header[2] != "score") {
        throw ConfigError(path.string() + ": header must start with case_id,label,score");
    }
    std::optional<std::size_t> size_col;
    std::vector<std::pair<std::size_t, std::string>> reader_cols;
    for (std::size_t c = 3; c < header.size(); ++c) {
        if (header[c] == "tumor_size_mm") {
            size_col = c;
        } else if (header[c].starts_with(kBiradsPrefix) && header[c].size() > kBiradsPrefix.size()) {
            reader_cols.emplace_back(c, header[c].substr(kBiradsPrefix.size()));
        } else {
            throw ConfigError(path.string() + ": unknown column '" + header[c] + "'");
        }
    }

    std::vector<CaseRecord> cases;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        if (f.size() != header.size()) throw ConfigError(where + "expected " + std::to_string(header.size()) + " fields");
        try {
            CaseRecord c;
            c.case_id = f[0];
            c.label = parse_label(f[1]);
            c.score = parse_double(f[2], "score");
            if (size_col && !f[*size_col].empty()) c.tumor_size_mm = parse_double(f[*size_col], "tumor size");
            for (const auto& [col, reader] : reader_cols) {
                if (f[col].empty()) continue;
                c.reader_birads[reader] = static_cast<int>(parse_double(f[col], "BIRADS"));
            }
            validate(c);
            cases.push_back(std::move(c));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cases;
}

void write_cases_csv(const std::filesystem::path& path, std::span<const CaseRecord> cases) {
    const bool any_size = std::any_of(cases.begin(), cases.end(), [](const auto& c) { return c.tumor_size_mm.has_value(); });
    const auto readers = reader_ids(cases);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "case_id,label,score";
    if (any_size) out << ",tumor_size_mm";
    for (const auto& r : readers) out << ',' << kBiradsPrefix << r;
    out << '\n';
    for (const auto& c : cases) {
        out << c.case_id << ',' << (c.label ? 1 : 0) << ',' << format_double(c.score);
        if (any_size) out << ',' << (c.tumor_size_mm ? format_double(*c.tumor_size_mm) : "");
        for (const auto& r : readers) {
            out << ',';
            if (const auto it = c.reader_birads.find(r); it != c.reader_birads.end()) out << it->second;
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_roc_csv(const std::filesystem::path& path, const RocAnalysis& roc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "threshold,sensitivity,specificity\n";
    for (const auto& p : roc.points) {
        out << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
            << format_double(p.sensitivity) << ',' << format_double(p.specificity) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_roc_svg(const std::filesystem::path& path, const RocAnalysis& roc, std::span<const PanelPoint> readers) {
    constexpr double kSize = 400.0;
    constexpr double kMargin = 40.0;
    const auto sx = [&](double fpr) { return format_double(kMargin + fpr * kSize); };
    const auto sy = [&](double tpr) { return format_double(kMargin + (1.0 - tpr) * kSize); };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const auto total = format_double(kSize + 2 * kMargin);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total << "\" height=\"" << total << "\">\n";
    out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(1)
        << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < roc.points.size(); ++i) {
        const auto& p = roc.points[i];
        out << (i ? " " : "") << sx(1.0 - p.specificity) << ',' << sy(p.sensitivity);
    }
    out << "\"/>\n";
    for (const auto& r : readers) {
        const char* color = r.readers.size() == 1 ? "firebrick" : "orange";
        out << "<circle cx=\"" << sx(1.0 - r.point.specificity) << "\" cy=\"" << sy(r.point.sensitivity)
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    out << "<text x=\"" << kMargin << "\" y=\"" << format_double(kMargin - 10) << "\" font-size=\"14\">AUC "
        << format_double(std::round(roc.auc * 1e4) / 1e4) << "</text>\n";
    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dbt
