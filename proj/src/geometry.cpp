#include "dbt/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dbt/common.hpp"

namespace dbt {

void validate(const ScoredBox& b) {
    const bool finite = std::isfinite(b.x_min) && std::isfinite(b.y_min) && std::isfinite(b.x_max) &&
                        std::isfinite(b.y_max) && std::isfinite(b.score);
    if (!finite || !(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
        throw std::invalid_argument("ScoredBox: degenerate or non-finite extent");
    }
    if (!(b.score >= 0.0 && b.score <= 1.0)) throw std::invalid_argument("ScoredBox: score outside [0, 1]");
}

ScoredBox make_box(double x_min, double y_min, double x_max, double y_max, double score,
                   std::optional<std::size_t> slice_index) {
    ScoredBox b{x_min, y_min, x_max, y_max, score, slice_index};
    validate(b);
    return b;
}

double iou(const ScoredBox& a, const ScoredBox& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

std::vector<std::size_t> nms_indices(const std::vector<ScoredBox>& boxes, double iou_threshold) {
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
        throw std::invalid_argument("nms: iou_threshold must lie in [0, 1]");
    }
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return boxes[i].score > boxes[j].score; });

    std::vector<std::size_t> kept;
    std::vector<bool> suppressed(boxes.size(), false);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t i = order[r];
        if (suppressed[i]) continue;
        kept.push_back(i);
        for (std::size_t s = r + 1; s < order.size(); ++s) {
            const std::size_t j = order[s];
            if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = true;
        }
    }
    return kept;
}

std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold) {
    std::vector<ScoredBox> out;
    for (std::size_t i : nms_indices(boxes, iou_threshold)) out.push_back(boxes[i]);
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string box_csv_header() { return "x_min,y_min,x_max,y_max,score,slice_index"; }

std::string to_csv_row(const ScoredBox& b) {
    std::string row = format_double(b.x_min) + ',' + format_double(b.y_min) + ',' + format_double(b.x_max) + ',' +
                      format_double(b.y_max) + ',' + format_double(b.score) + ',';
    if (b.slice_index) row += std::to_string(*b.slice_index);
    return row;
}

namespace {

double parse_double_field(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::invalid_argument("bad numeric field '" + s + "'");
    }
    return v;
}

}  // namespace

ScoredBox parse_box_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 6) throw std::invalid_argument("box row needs 6 fields: '" + line + "'");

    ScoredBox b;
    b.x_min = parse_double_field(fields[0]);
    b.y_min = parse_double_field(fields[1]);
    b.x_max = parse_double_field(fields[2]);
    b.y_max = parse_double_field(fields[3]);
    b.score = parse_double_field(fields[4]);
    if (!fields[5].empty()) {
        std::size_t idx = 0;
        const auto res = std::from_chars(fields[5].data(), fields[5].data() + fields[5].size(), idx);
        if (res.ec != std::errc{} || res.ptr != fields[5].data() + fields[5].size()) {
            throw std::invalid_argument("bad slice_index '" + fields[5] + "'");
        }
        b.slice_index = idx;
    }
    validate(b);
    return b;
}

void write_boxes_csv(const std::filesystem::path& path, const std::vector<ScoredBox>& boxes) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << box_csv_header() << '\n';
    for (const auto& b : boxes) out << to_csv_row(b) << '\n';
}

std::vector<ScoredBox> read_boxes_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    std::vector<ScoredBox> boxes;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            first = false;
            if (line == box_csv_header()) continue;
        }
        if (line.empty()) continue;
        try {
            boxes.push_back(parse_box_csv_row(line));
        } catch (const std::invalid_argument& e) {
            throw IoError(path.string() + ": " + e.what());
        }
    }
    return boxes;
}

}  // namespace dbt
