#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dbt {

/// Axis-aligned box in continuous pixel coordinates with a classification
/// score in [0, 1]. slice_index is set for boxes pooled from a volume.
struct ScoredBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 1.0;
    double y_max = 1.0;
    double score = 0.0;
    std::optional<std::size_t> slice_index;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }

    bool operator==(const ScoredBox&) const = default;
};

/// Throws std::invalid_argument unless x_min < x_max, y_min < y_max and
/// 0 <= score <= 1.
void validate(const ScoredBox& box);
ScoredBox make_box(double x_min, double y_min, double x_max, double y_max, double score,
                   std::optional<std::size_t> slice_index = std::nullopt);

double iou(const ScoredBox& a, const ScoredBox& b);

/// Greedy non-maximum suppression. Returns indices into `boxes` of the kept
/// boxes, in descending score order (ties: lower index first). A box is
/// suppressed when its IOU with a kept box is strictly above the threshold.
std::vector<std::size_t> nms_indices(const std::vector<ScoredBox>& boxes, double iou_threshold);
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold);

// CSV rows: x_min,y_min,x_max,y_max,score,slice_index (empty when absent).
std::string box_csv_header();
std::string to_csv_row(const ScoredBox& box);
ScoredBox parse_box_csv_row(const std::string& line);
void write_boxes_csv(const std::filesystem::path& path, const std::vector<ScoredBox>& boxes);
std::vector<ScoredBox> read_boxes_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace dbt
