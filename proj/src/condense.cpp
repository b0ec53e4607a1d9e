#include "dbt/condense.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dbt/common.hpp"
#include "dbt/mil.hpp"

namespace dbt {

SliceRange slice_range(std::size_t n_slices) {
    if (n_slices == 0) throw std::invalid_argument("slice_range: n_slices must be >= 1");
    const auto skip = static_cast<std::size_t>(std::floor(kSliceTrimFraction * static_cast<double>(n_slices)));
    if (2 * skip >= n_slices) return {0, n_slices - 1};
    return {skip, n_slices - 1 - skip};
}

double choose_score_threshold(std::span<const ValidationCase> validation, double target_sensitivity) {
    if (!(target_sensitivity >= 0.0 && target_sensitivity <= 1.0)) {
        throw std::invalid_argument("choose_score_threshold: target_sensitivity must lie in [0, 1]");
    }
    std::vector<double> positives;
    for (const auto& v : validation) {
        if (v.label) positives.push_back(v.max_box_score);
    }
    if (positives.empty()) throw std::invalid_argument("choose_score_threshold: no positive validation cases");

    // Candidate thresholds are the positive scores themselves; scanning from
    // the top, the first one meeting the target is the largest.
    std::sort(positives.begin(), positives.end(), std::greater<>());
    const auto n = static_cast<double>(positives.size());
    for (std::size_t i = 0; i < positives.size(); ++i) {
        const double t = positives[i];
        std::size_t at_or_above = i + 1;
        while (at_or_above < positives.size() && positives[at_or_above] == t) ++at_or_above;
        if (static_cast<double>(at_or_above) / n >= target_sensitivity) return t;
    }
    return 0.0;
}

std::vector<ScoredBox> detect_slices(const Volume& vol, const Scorer& scorer) {
    const SliceRange range = slice_range(vol.slice_count());
    const Volume normalized = normalize_volume(vol);
    const std::size_t count = range.last - range.first + 1;
    std::vector<std::vector<ScoredBox>> per_slice(count);
    parallel_for(count, [&](std::size_t i) {
        const std::size_t k = range.first + i;
        auto boxes = scorer.detect(normalized.slice(k));
        for (auto& b : boxes) b.slice_index = k;
        per_slice[i] = std::move(boxes);
    });
    std::vector<ScoredBox> pooled;
    for (auto& boxes : per_slice) pooled.insert(pooled.end(), boxes.begin(), boxes.end());
    return pooled;
}

double volume_max_box_score(const Volume& vol, const Scorer& scorer) {
    return mil_image_score(detect_slices(vol, scorer));
}

std::vector<ScoredBox> aggregate_pooled(std::span<const ScoredBox> pooled, double score_threshold,
                                        double iou_threshold) {
    std::vector<ScoredBox> passing;
    for (const auto& b : pooled) {
        if (b.score >= score_threshold) passing.push_back(b);
    }
    return nms(passing, iou_threshold);
}

std::vector<ScoredBox> aggregate_boxes(const Volume& vol, const Scorer& scorer, double score_threshold,
                                       double iou_threshold) {
    return aggregate_pooled(detect_slices(vol, scorer), score_threshold, iou_threshold);
}

ImageGrid OptimizedImage::provenance_image() const {
    std::vector<double> v(provenance.begin(), provenance.end());
    return ImageGrid(image.width(), image.height(), std::move(v));
}

OptimizedImage build_optimized_image(const Volume& vol, std::span<const ScoredBox> boxes) {
    const std::size_t w = vol.width();
    const std::size_t h = vol.height();
    const std::size_t center = center_slice_index(vol.slice_count());
    if (vol.slice_count() > 65536) throw std::invalid_argument("build_optimized_image: too many slices for 16-bit provenance");

    OptimizedImage out{vol.slice(center), std::vector<std::uint16_t>(w * h, static_cast<std::uint16_t>(center)),
                       {boxes.begin(), boxes.end()}, {}};

    std::vector<std::size_t> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Descending score, ties by input order; painted back to front so the
    // preferred box lands last.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const ScoredBox& b = boxes[*it];
        validate(b);
        if (!b.slice_index || *b.slice_index >= vol.slice_count()) {
            throw std::invalid_argument("build_optimized_image: box without a valid slice_index");
        }
        const PixelSpan span = pixel_span(b, w, h);
        if (span.clipped) out.warnings.push_back("box " + to_csv_row(b) + " clipped to the image bounds");
        const ImageGrid& src = vol.slice(*b.slice_index);
        for (std::size_t y = span.y0; y < span.y1; ++y) {
            for (std::size_t x = span.x0; x < span.x1; ++x) {
                out.image(x, y) = src(x, y);
                out.provenance[y * w + x] = static_cast<std::uint16_t>(*b.slice_index);
            }
        }
    }
    return out;
}

OptimizedImage condense(const Volume& vol, const Scorer& scorer, const CondenseParams& params) {
    const auto kept = aggregate_boxes(vol, scorer, params.score_threshold, params.iou_threshold);
    return build_optimized_image(vol, kept);
}

void write_optimized(const std::filesystem::path& dir, const OptimizedImage& opt) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    write_pgm(dir / "optimized.pgm", opt.image);
    write_pgm(dir / "provenance.pgm", opt.provenance_image());
    write_boxes_csv(dir / "boxes.csv", opt.kept_boxes);
}

}  // namespace dbt
