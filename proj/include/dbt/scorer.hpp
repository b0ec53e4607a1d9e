#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbt/geometry.hpp"
#include "dbt/imaging.hpp"
#include "dbt/mil.hpp"

namespace dbt {

/// Anything that turns a preprocessed image into scored boxes. Implementations
/// are immutable and safe to call concurrently.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::vector<ScoredBox> detect(const ImageGrid& img) const = 0;
    /// Serializable description, loadable with scorer_from_json.
    virtual nlohmann::json to_json() const = 0;
};

using ScorerHandle = std::shared_ptr<const Scorer>;

/// Difference-of-Gaussians blob detector. The smoothing scales and box size
/// are tied to a single lesion-radius prior.
struct ReferenceDetectorParams {
    double lesion_radius = 4.0;
    double inner_sigma_factor = 0.7;
    double outer_sigma_factor = 2.0;
    /// Local maxima at or below this response are ignored.
    double response_floor = 4.0;
    /// score = logistic((response - score_midpoint) / score_scale)
    double score_midpoint = 20.0;
    double score_scale = 6.0;
    /// Box side length as a multiple of the radius prior.
    double box_scale = 2.5;

    bool operator==(const ReferenceDetectorParams&) const = default;
};

void to_json(nlohmann::json& j, const ReferenceDetectorParams& p);
void from_json(const nlohmann::json& j, ReferenceDetectorParams& p);

class ReferenceDetector final : public Scorer {
public:
    explicit ReferenceDetector(ReferenceDetectorParams params = {});

    std::vector<ScoredBox> detect(const ImageGrid& img) const override;
    nlohmann::json to_json() const override;

    /// Blob response map (inner blur minus outer blur).
    ImageGrid response(const ImageGrid& img) const;
    const ReferenceDetectorParams& params() const { return params_; }

private:
    ReferenceDetectorParams params_;
};

/// The trained linear MIL head re-scoring candidate boxes proposed by a
/// permissive reference detector.
class ToyMilScorer final : public Scorer {
public:
    ToyMilScorer(ToyScorer head, ReferenceDetectorParams candidate_params);

    std::vector<ScoredBox> detect(const ImageGrid& img) const override;
    nlohmann::json to_json() const override;

    /// Candidate boxes (unscored). Falls back to one centered box when the
    /// detector finds nothing, so every image yields at least one candidate.
    std::vector<ScoredBox> candidates(const ImageGrid& img) const;
    std::vector<FeatureVector> candidate_features(const ImageGrid& img) const;

    const ToyScorer& head() const { return head_; }
    const ReferenceDetectorParams& candidate_params() const { return detector_.params(); }

private:
    ToyScorer head_;
    ReferenceDetector detector_;
};

/// Default candidate generator for MIL training: the reference detector with
/// a permissive response floor.
ReferenceDetectorParams permissive_candidate_params(ReferenceDetectorParams base = {});

ScorerHandle make_reference_scorer(ReferenceDetectorParams params = {});
ScorerHandle scorer_from_json(const nlohmann::json& j);
/// "reference" names the default reference detector; anything else is a JSON
/// scorer file (e.g. toy_scorer.json).
ScorerHandle load_scorer(const std::string& spec);

/// Max of the box scores; 0.0 for an empty list.
double mil_image_score(std::span<const ScoredBox> boxes);

/// Mean MIL score over every scorer and both horizontal orientations.
double ensemble_image_score(std::span<const ScorerHandle> scorers, const ImageGrid& img);

enum class Breast { Left, Right };
std::string to_string(Breast b);
Breast parse_breast(const std::string& s);

struct ViewScore {
    std::string case_id;
    Breast breast = Breast::Left;
    std::string view;
    double score = 0.0;
};

/// Mean over the views of one breast. Mixed-breast input is rejected.
double breast_score(std::span<const ViewScore> views);
/// Max over one or two breast scores.
double study_score(std::span<const double> breasts);

// ---- study scoring ---------------------------------------------------------

struct PreprocessConfig {
    /// 0 keeps the native height.
    std::size_t target_height = 1750;
    bool crop = true;
    double background_threshold = 0.0;

    bool operator==(const PreprocessConfig&) const = default;
};

/// resize -> crop background -> normalize to [-127.5, 127.5].
ImageGrid preprocess(const ImageGrid& raw, const PreprocessConfig& cfg);

struct StudyView {
    std::filesystem::path image;
    Breast breast = Breast::Left;
    std::string view;
};

struct StudyEntry {
    std::string case_id;
    std::optional<bool> label;
    std::optional<double> tumor_size_mm;
    std::vector<StudyView> views;
};

/// Manifest JSON: {"studies": [{"case_id", "label"?, "tumor_size_mm"?,
/// "views": [{"path", "laterality": "L"|"R", "view"}]}]}. Relative paths
/// resolve against the manifest's directory.
std::vector<StudyEntry> read_study_manifest(const std::filesystem::path& path);
void write_study_manifest(const std::filesystem::path& path, const std::vector<StudyEntry>& studies);

struct StudyScores {
    std::string case_id;
    std::optional<bool> label;
    std::optional<double> tumor_size_mm;
    std::vector<ViewScore> views;
    std::vector<std::pair<Breast, double>> breasts;
    double study = 0.0;
};

/// Per view: ensemble score of the preprocessed image; per breast: mean of
/// its views; per study: max over breasts.
std::vector<StudyScores> score_studies(const std::vector<StudyEntry>& studies, std::span<const ScorerHandle> scorers,
                                       const PreprocessConfig& prep);

/// scores.csv rows: level,case_id,breast,view,score.
void write_scores_csv(const std::filesystem::path& path, const std::vector<StudyScores>& scores);

}  // namespace dbt
