#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbt/condense.hpp"
#include "dbt/mil.hpp"
#include "dbt/phantom.hpp"
#include "dbt/scorer.hpp"
#include "dbt/stats.hpp"

namespace dbt {

#ifndef DBT_VERSION
#define DBT_VERSION "0.0.0"
#endif
inline constexpr const char* kToolVersion = DBT_VERSION;

// ---- output manifests ------------------------------------------------------

/// {"tool", "version", "command", "seed", "config_hash", "config"}. The hash
/// is FNV-1a over the compact dump of `config`; nothing time-dependent is
/// recorded so reruns reproduce the file byte for byte.
nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed);
void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed);

// ---- cohorts on disk -------------------------------------------------------

/// Writes `dir/<case_id>/` volumes plus `dir/truth.json`.
void write_cohort(const std::filesystem::path& dir, const std::vector<Phantom>& cohort);

struct CohortCase {
    PhantomTruth truth;
    std::filesystem::path volume_dir;
};
/// Reads `dir/truth.json`; volumes are located at `dir/<case_id>/`.
std::vector<CohortCase> read_cohort_index(const std::filesystem::path& dir);

// ---- training sets ---------------------------------------------------------

/// One training case per image (plus its mirror when flip_augment is set),
/// with candidates from the permissive detector.
std::vector<TrainingCase> make_training_cases(const std::vector<ImageGrid>& images, const std::vector<bool>& labels,
                                              const ReferenceDetectorParams& candidate_params, bool flip_augment);

// ---- condensation study ----------------------------------------------------

/// Study-level scores of one case under each pathway.
struct PathwayScores {
    std::string case_id;
    bool label = false;
    std::optional<double> tumor_size_mm;
    /// Toy MIL head trained on optimized images, scored on optimized images.
    double optimized = 0.0;
    /// Same head family, trained and scored on the center slice.
    double center = 0.0;
    /// Same head family, trained and scored on the mean projection.
    double projection = 0.0;
    /// Untrained reference detector, max box score over the evaluated slices.
    double slice_max = 0.0;
};

struct CondensationStudyConfig {
    /// Training and threshold-calibration cases.
    CohortConfig train_cohort;
    /// Held-out evaluation cases.
    CohortConfig eval_cohort;
    ReferenceDetectorParams detector;
    double iou_threshold = kDefaultIouThreshold;
    double target_sensitivity = kDefaultTargetSensitivity;
    double learning_rate = 0.05;
    std::size_t iterations = 4000;
    bool flip_augment = true;
    std::uint64_t train_seed = 0;
};

struct CondensationStudy {
    double score_threshold = 0.0;
    ToyScorer optimized_head;
    ToyScorer center_head;
    ToyScorer projection_head;
    std::vector<PathwayScores> cases;
};

/// Calibrates the condensation threshold on the training cohort, trains one
/// toy head per 2D representation, and scores the evaluation cohort under
/// every pathway.
CondensationStudy run_condensation_study(const CondensationStudyConfig& cfg);

// ---- full run --------------------------------------------------------------

struct RunConfig {
    std::filesystem::path output_dir = "report";
    std::uint64_t seed = 0;
    /// Template for both cohorts; their seeds are derived from `seed`.
    CohortConfig cohort;
    std::size_t train_cancer = 100;
    std::size_t train_negative = 100;
    ReferenceDetectorParams detector;
    double iou_threshold = kDefaultIouThreshold;
    double target_sensitivity = kDefaultTargetSensitivity;
    double learning_rate = 0.05;
    std::size_t iterations = 4000;
    std::size_t n_resamples = kDefaultResamples;
    std::size_t n_populations = kDefaultPopulations;
    std::vector<double> size_edges = default_size_edges();
    /// Optional target tumor-size shares, one per bin.
    std::optional<std::vector<double>> size_target;
};

/// Throws ConfigError on out-of-range values (e.g. an IOU threshold outside
/// [0, 1]).
void validate(const RunConfig& cfg);

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

CondensationStudyConfig study_config(const RunConfig& cfg);

/// Runs phantom generation, calibration, condensation, training, scoring and
/// evaluation, writing the report bundle to cfg.output_dir. Returns the
/// summary that was written to summary.json.
nlohmann::json run_pipeline(const RunConfig& cfg);

// ---- evaluation helpers shared with the CLI ---------------------------------

/// {"auc", "ci_lo", "ci_hi", "n_positive", "n_negative", "redraws"}.
nlohmann::json auc_summary(std::span<const CaseRecord> cases, const BootstrapOptions& opts);
nlohmann::json delong_summary(const DeLongResult& r);

}  // namespace dbt
