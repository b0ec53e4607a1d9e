#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dbt {

/// One evaluated case: ground truth, model score and optional reader reads.
struct CaseRecord {
    std::string case_id;
    bool label = false;
    double score = 0.0;
    /// Only meaningful for cancers.
    std::optional<double> tumor_size_mm;
    /// reader id -> BIRADS 1..5
    std::map<std::string, int> reader_birads;
};

/// Throws std::invalid_argument for BIRADS outside 1..5, non-finite scores,
/// or a tumor size on a non-cancer.
void validate(const CaseRecord& c);

// ---- ROC -------------------------------------------------------------------

struct RocPoint {
    /// Cases with score >= threshold are called positive; +inf for the
    /// all-negative corner.
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 1.0;
};

struct RocAnalysis {
    /// From (sens 0, spec 1) to (sens 1, spec 0), one point per distinct
    /// score; sensitivity non-decreasing, specificity non-increasing.
    std::vector<RocPoint> points;
    double auc = 0.5;
    std::size_t n_positive = 0;
    std::size_t n_negative = 0;
};

/// Empirical ROC with thresholds at every distinct score. The AUC is the
/// trapezoidal area of that curve, which equals the Mann-Whitney statistic
/// with ties counted half. Single-class input is rejected.
RocAnalysis roc_and_auc(std::span<const CaseRecord> cases);
RocAnalysis roc_from_scores(std::span<const double> scores, const std::vector<bool>& labels);

/// Trapezoidal area under an arbitrary stored curve (1 - spec on x).
double trapezoid_auc(std::span<const RocPoint> points);

/// Rank-based AUC over a subset of cases (indices may repeat). Returns
/// nullopt when the subset lacks either class.
std::optional<double> auc_of_indices(std::span<const double> scores, const std::vector<bool>& labels,
                                     std::span<const std::size_t> idx);

/// Linear interpolation along the curve; where the curve is vertical or
/// horizontal at the target, the better of the two coordinates is returned.
double sensitivity_at_specificity(const RocAnalysis& roc, double target_specificity);
double specificity_at_sensitivity(const RocAnalysis& roc, double target_sensitivity);

// ---- bootstrap -------------------------------------------------------------

inline constexpr std::size_t kDefaultResamples = 10000;
inline constexpr std::size_t kDefaultPopulations = 5000;

struct BootstrapOptions {
    std::size_t n_resamples = kDefaultResamples;
    std::uint64_t seed = 0;
    double confidence = 0.95;
    /// Abort when the metric is undefined on more than this share of draws.
    double max_undefined_fraction = 0.01;
};

struct BootstrapResult {
    double point = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    /// Resamples that were re-drawn because the metric was undefined.
    std::size_t redraws = 0;
    std::vector<double> replicates;
};

/// A metric evaluated on a resample given as indices into the case list.
/// nullopt marks the resample as undefined (re-drawn).
using ResampleMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Case-level resampling with replacement, same size as the input; CI from
/// the percentile method with linear interpolation. Resample r draws from a
/// stream derived from (seed, r, attempt), so results do not depend on the
/// thread count. Throws NumericError when too many resamples are undefined.
BootstrapResult bootstrap_ci(std::size_t n_cases, const ResampleMetric& metric, const BootstrapOptions& opts);

/// Same, with a metric over materialized case lists.
BootstrapResult bootstrap_ci(std::span<const CaseRecord> cases,
                             const std::function<std::optional<double>(std::span<const CaseRecord>)>& metric,
                             const BootstrapOptions& opts);

BootstrapResult bootstrap_auc(std::span<const CaseRecord> cases, const BootstrapOptions& opts);

/// Linear-interpolation percentile (q in [0, 1]) of sorted data.
double percentile_sorted(std::span<const double> sorted, double q);

// ---- readers ---------------------------------------------------------------

inline constexpr int kRecallBirads = 3;

struct OperatingPoint {
    double sensitivity = 0.0;
    double specificity = 0.0;
    bool operator==(const OperatingPoint&) const = default;
};

/// Recall iff BIRADS >= 3. Throws std::invalid_argument if the reader is
/// missing on any case or a class is absent.
OperatingPoint reader_operating_point(std::span<const CaseRecord> cases, const std::string& reader_id);

/// Panel read: per-case mean BIRADS over the subset, recall iff mean >= 3.
OperatingPoint reader_panel_combine(std::span<const CaseRecord> cases, std::span<const std::string> readers);

struct PanelPoint {
    std::vector<std::string> readers;
    OperatingPoint point;
};

/// Every subset of the readers with size in [min_size, max_size], ordered by
/// size, then lexicographically by position in `readers`.
std::vector<PanelPoint> enumerate_panels(std::span<const CaseRecord> cases, std::span<const std::string> readers,
                                         std::size_t min_size = 1, std::size_t max_size = 0);

/// Reader ids present on any case, in sorted order.
std::vector<std::string> reader_ids(std::span<const CaseRecord> cases);

enum class MatchedMetric {
    /// Model sensitivity at the mean reader specificity vs mean reader sensitivity.
    Sensitivity,
    /// Model specificity at the mean reader sensitivity vs mean reader specificity.
    Specificity,
};

struct PairedComparison {
    double model_value = 0.0;
    double reader_value = 0.0;
    double delta = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    /// Share of resamples with model - reader < 0; exact zeros count half.
    double p_value = 0.0;
    std::size_t redraws = 0;
};

/// Model vs mean-reader comparison at the matched operating point, with
/// readers and model recomputed on every resample.
PairedComparison paired_delta_pvalue(std::span<const CaseRecord> cases, std::span<const std::string> readers,
                                     MatchedMetric metric, const BootstrapOptions& opts);

// ---- DeLong ----------------------------------------------------------------

struct DeLongResult {
    double auc_a = 0.0;
    double auc_b = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    double cov_ab = 0.0;
    /// Variance of auc_a - auc_b.
    double var_diff = 0.0;
    double z = 0.0;
    /// Two-sided normal p-value; NaN when degenerate.
    double p = 1.0;
    /// Zero variance with unequal AUCs: the test is undefined.
    bool degenerate = false;
};

/// Paired AUC comparison with the structural-component covariance estimate.
/// Needs at least two cases of each class.
DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         const std::vector<bool>& labels);

// ---- tumor-size matched resampling ----------------------------------------

/// Bins split at ascending `edges`: (-inf, e0), [e0, e1), ..., [e_last, inf).
struct SizeHistogram {
    std::vector<double> edges;
    std::vector<double> shares;

    std::size_t bin_count() const { return edges.size() + 1; }
    std::size_t bin_of(double size_mm) const;
    /// Throws ConfigError on unsorted edges, wrong share count, or shares that
    /// are negative or sum to zero.
    void validate() const;
    /// Shares rescaled to sum to one.
    std::vector<double> normalized() const;
};

/// Clinically standard bins: <10, 10-20, 20-50, >=50 mm.
std::vector<double> default_size_edges();

/// Share of the positives falling in each bin.
std::vector<double> source_size_shares(std::span<const CaseRecord> cases, const SizeHistogram& bins);

struct SizeMatchedResult {
    double mean_auc = 0.0;
    double sd_auc = 0.0;
    std::size_t n_populations = 0;
    /// Mean total-variation distance between resampled positive sizes and
    /// the target histogram.
    double mean_tv_distance = 0.0;
    std::vector<double> source_shares;
    std::vector<double> target_shares;
};

/// Each population redraws the positives with per-bin probability matched to
/// the target (bin ~ target share, case uniform within bin) and the
/// negatives uniformly, both with replacement at the original counts.
SizeMatchedResult size_matched_auc(std::span<const CaseRecord> cases, const SizeHistogram& target,
                                   std::size_t n_populations, std::uint64_t seed);

// ---- files -----------------------------------------------------------------

/// cases.csv: case_id,label,score[,tumor_size_mm][,birads_<reader>...]
std::vector<CaseRecord> read_cases_csv(const std::filesystem::path& path);
void write_cases_csv(const std::filesystem::path& path, std::span<const CaseRecord> cases);

/// roc.csv: threshold,sensitivity,specificity
void write_roc_csv(const std::filesystem::path& path, const RocAnalysis& roc);

/// Minimal ROC plot with optional reader points.
void write_roc_svg(const std::filesystem::path& path, const RocAnalysis& roc,
                   std::span<const PanelPoint> readers = {});

}  // namespace dbt
