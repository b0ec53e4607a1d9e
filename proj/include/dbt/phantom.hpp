#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbt/imaging.hpp"

namespace dbt {

/// Declared physical scale of phantom pixels.
inline constexpr double kPhantomMmPerPixel = 0.1;

/// A planted lesion: a cosine-tapered bright disc spanning `slice_extent`
/// slices around `center_slice`. Contrast peaks on the center slice and
/// tapers on the neighbours, so each lesion has a unique best slice.
struct LesionSpec {
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 1.0;
    std::size_t center_slice = 0;
    std::size_t slice_extent = 1;
    double contrast = 0.0;
    bool malignant = true;

    std::size_t first_slice() const { return center_slice - (slice_extent - 1) / 2; }
    std::size_t last_slice() const { return first_slice() + slice_extent - 1; }
    /// Contrast multiplier on slice k (1 on the center slice, 0 off-extent).
    double slice_weight(std::size_t k) const;
    double tumor_size_mm() const { return 2.0 * radius * kPhantomMmPerPixel; }

    bool operator==(const LesionSpec&) const = default;
};

struct PhantomConfig {
    std::size_t width = 64;
    std::size_t height = 64;
    std::size_t n_slices = 20;
    double background_level = 2000.0;
    /// Correlation length of the tissue texture, in pixels.
    double background_texture_scale = 14.0;
    double texture_amplitude = 20.0;
    /// Share of texture variance common to all slices.
    double texture_slice_correlation = 0.7;
    /// Benign distractor blobs per slice.
    std::size_t clutter_density = 3;
    double distractor_amplitude_min = 60.0;
    double distractor_amplitude_max = 200.0;
    double distractor_sigma_min = 6.0;
    double distractor_sigma_max = 10.0;
    double distractor_jitter = 0.75;
    double noise_sigma = 12.0;
    std::uint64_t seed = 0;

    bool operator==(const PhantomConfig&) const = default;
};

/// Throws ConfigError on non-positive sizes/scales or inverted ranges.
void validate(const PhantomConfig& cfg);

struct PhantomTruth {
    std::string case_id;
    std::vector<LesionSpec> lesions;
    /// True iff any lesion is malignant.
    bool label = false;

    double largest_malignant_size_mm() const;
};

struct Phantom {
    Volume volume;
    PhantomTruth truth;
};

/// Renders a deterministic volume. Output depends only on (cfg, lesions);
/// pixel values are rounded to integers in [0, 65535] so the 16-bit file
/// format stores them exactly. Lesions outside the grid or slice stack are
/// rejected with ConfigError.
Phantom generate_volume(const PhantomConfig& cfg, const std::vector<LesionSpec>& lesions,
                        std::string case_id = "case");

/// Mean-over-slices projection, renormalized to [-127.5, 127.5].
ImageGrid project_dm(const Volume& vol);

/// A batch of cancer and negative cases drawn from one master seed.
struct CohortConfig {
    PhantomConfig phantom;
    std::size_t n_cancer = 10;
    std::size_t n_negative = 10;
    double radius_min = 3.5;
    double radius_max = 4.5;
    double contrast_min = 60.0;
    double contrast_max = 300.0;
    std::size_t extent_min = 3;
    std::size_t extent_max = 5;
    std::uint64_t seed = 1;
    std::string id_prefix = "case";

    bool operator==(const CohortConfig&) const = default;
};

void validate(const CohortConfig& cfg);

/// Lesion parameters for case i of the cohort (empty for negatives). Cancer
/// cases come first; case seeds are derived from (seed, i).
std::vector<LesionSpec> cohort_lesions(const CohortConfig& cfg, std::size_t i);
PhantomConfig cohort_case_config(const CohortConfig& cfg, std::size_t i);
std::string cohort_case_id(const CohortConfig& cfg, std::size_t i);

std::vector<Phantom> generate_cohort(const CohortConfig& cfg);

void to_json(nlohmann::json& j, const LesionSpec& l);
void from_json(const nlohmann::json& j, LesionSpec& l);
void to_json(nlohmann::json& j, const PhantomTruth& t);
void from_json(const nlohmann::json& j, PhantomTruth& t);
void to_json(nlohmann::json& j, const PhantomConfig& c);
void from_json(const nlohmann::json& j, PhantomConfig& c);
void to_json(nlohmann::json& j, const CohortConfig& c);
void from_json(const nlohmann::json& j, CohortConfig& c);

void write_truth(const std::filesystem::path& path, const std::vector<PhantomTruth>& truths);
std::vector<PhantomTruth> read_truth(const std::filesystem::path& path);

}  // namespace dbt
