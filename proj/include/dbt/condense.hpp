#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbt/geometry.hpp"
#include "dbt/imaging.hpp"
#include "dbt/scorer.hpp"

namespace dbt {

inline constexpr double kDefaultIouThreshold = 0.2;
inline constexpr double kDefaultTargetSensitivity = 0.99;
inline constexpr double kSliceTrimFraction = 0.1;

struct SliceRange {
    std::size_t first = 0;
    std::size_t last = 0;  // inclusive
    bool operator==(const SliceRange&) const = default;
};

/// Drops floor(10%) of the slices at each end; falls back to every slice when
/// nothing would remain.
SliceRange slice_range(std::size_t n_slices);

inline std::size_t center_slice_index(std::size_t n_slices) { return n_slices / 2; }

struct ValidationCase {
    double max_box_score = 0.0;
    bool label = false;
};

/// Largest threshold t such that the fraction of positives scoring >= t is
/// at least target_sensitivity (0 when no such t exists).
/// Throws std::invalid_argument without positives.
double choose_score_threshold(std::span<const ValidationCase> validation, double target_sensitivity);

/// Runs the scorer on every evaluated slice of the volume, after a single
/// volume-wide intensity normalization. Boxes carry slice_index and come back
/// in slice order, then detector order.
std::vector<ScoredBox> detect_slices(const Volume& vol, const Scorer& scorer);

/// Highest box score over the evaluated slices (0 with no boxes).
double volume_max_box_score(const Volume& vol, const Scorer& scorer);

/// Pools boxes from every evaluated slice, drops those scoring below
/// score_threshold and runs x-y NMS over the pool.
std::vector<ScoredBox> aggregate_boxes(const Volume& vol, const Scorer& scorer, double score_threshold,
                                       double iou_threshold);
/// Same, over boxes already produced by detect_slices.
std::vector<ScoredBox> aggregate_pooled(std::span<const ScoredBox> pooled, double score_threshold,
                                        double iou_threshold);

struct OptimizedImage {
    ImageGrid image;
    /// Source slice of every pixel.
    std::vector<std::uint16_t> provenance;
    std::vector<ScoredBox> kept_boxes;
    std::vector<std::string> warnings;

    std::size_t provenance_at(std::size_t x, std::size_t y) const { return provenance[y * image.width() + x]; }
    ImageGrid provenance_image() const;
};

/// Starts from the center slice and paints each box's pixels from its source
/// slice in ascending score order, so the strongest box wins shared pixels.
/// Boxes reaching outside the grid are clipped with a warning.
OptimizedImage build_optimized_image(const Volume& vol, std::span<const ScoredBox> boxes);

struct CondenseParams {
    double score_threshold = 0.0;
    double iou_threshold = kDefaultIouThreshold;
};

OptimizedImage condense(const Volume& vol, const Scorer& scorer, const CondenseParams& params);

/// optimized.pgm, provenance.pgm and boxes.csv under `dir`.
void write_optimized(const std::filesystem::path& dir, const OptimizedImage& opt);

}  // namespace dbt
