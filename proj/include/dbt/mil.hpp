#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbt/common.hpp"
#include "dbt/geometry.hpp"
#include "dbt/imaging.hpp"

namespace dbt {

// Patch features: mean, standard deviation, center-minus-border contrast and
// log box area, each shifted/scaled by the fixed constants below. Images are
// expected in the normalized [-127.5, 127.5] range.
inline constexpr std::size_t kFeatureCount = 4;
using FeatureVector = std::array<double, kFeatureCount>;

struct FeatureScaling {
    static constexpr double kMeanScale = 64.0;
    static constexpr double kStdScale = 32.0;
    static constexpr double kContrastScale = 32.0;
    static constexpr double kLogAreaOffset = 4.0;
    static constexpr double kLogAreaScale = 2.0;
};

/// Pixel rectangle [x0, x1) x [y0, y1) of the pixels whose centers fall in a
/// box, clipped to a width x height grid. `clipped` is set when the box
/// reached outside the grid.
struct PixelSpan {
    std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    bool clipped = false;
    bool empty() const { return x0 >= x1 || y0 >= y1; }
};
PixelSpan pixel_span(const ScoredBox& box, std::size_t width, std::size_t height);

/// Throws std::invalid_argument for invalid boxes or boxes holding no pixel.
FeatureVector extract_patch_features(const ImageGrid& img, const ScoredBox& box);

/// Linear logistic head over patch features: logit = weights . f + bias.
struct ToyScorer {
    FeatureVector weights{};
    double bias = 0.0;

    static constexpr std::size_t kParameterCount = kFeatureCount + 1;
    double logit(const FeatureVector& f) const;
    /// weights followed by bias.
    std::array<double, kParameterCount> parameters() const;
    static ToyScorer from_parameters(std::span<const double> p);

    bool operator==(const ToyScorer&) const = default;
};

struct MilForward {
    double score = 0.0;
    double max_logit = 0.0;
    std::size_t argmax = 0;
};

/// Max-over-candidates logistic score. Ties go to the lowest index. Empty
/// candidate lists are rejected.
MilForward mil_forward(const ToyScorer& theta, std::span<const FeatureVector> candidates);
MilForward mil_forward(const ToyScorer& theta, const ImageGrid& img, std::span<const ScoredBox> candidates);

struct MilLossGrad {
    double loss = 0.0;
    std::array<double, ToyScorer::kParameterCount> grad{};
    std::size_t argmax = 0;
};

/// Binary cross-entropy on the max-pooled score. The gradient is routed
/// through the argmax candidate only: (score - label) * [features, 1].
MilLossGrad mil_loss_grad(const ToyScorer& theta, std::span<const FeatureVector> candidates, bool label);
MilLossGrad mil_loss_grad(const ToyScorer& theta, const ImageGrid& img, std::span<const ScoredBox> candidates,
                          bool label);

/// A weakly labeled training case: candidate features and a case label.
struct TrainingCase {
    std::vector<FeatureVector> candidates;
    bool label = false;
};

struct TrainingDataset {
    std::string name;
    std::vector<TrainingCase> cases;
};

struct CaseRef {
    std::size_t dataset = 0;
    std::size_t index = 0;
    bool operator==(const CaseRef&) const = default;
};

/// Class-balanced sampling across datasets: a dataset is picked with
/// probability proportional to its number of cancer cases, then a class with
/// probability 1/2, then a case uniformly within that class.
class BalancedSampler {
public:
    /// Throws std::invalid_argument when any dataset lacks either class.
    explicit BalancedSampler(std::span<const TrainingDataset> datasets);
    /// Pools given directly as per-dataset label lists.
    explicit BalancedSampler(const std::vector<std::vector<bool>>& labels);

    CaseRef sample(Rng& rng) const;

    std::size_t dataset_count() const { return pools_.size(); }

private:
    struct Pool {
        std::vector<std::size_t> cancer;
        std::vector<std::size_t> negative;
    };
    void init(const std::vector<std::vector<bool>>& labels);

    std::vector<Pool> pools_;
    std::vector<double> cumulative_;
};

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t iterations = 2000;
    std::uint64_t seed = 0;
    std::vector<TrainingDataset> datasets;
    ToyScorer initial{};
};

struct TrainResult {
    ToyScorer scorer;
    /// Loss of the sampled case at each iteration, before the update.
    std::vector<double> loss_trajectory;
};

/// Plain SGD, one balanced sample per iteration. Deterministic for a given
/// seed. Throws NumericError if the loss or parameters become non-finite.
TrainResult train(const TrainConfig& cfg);

/// Class-balanced mean loss: average of the per-class mean BCE.
double balanced_loss(const ToyScorer& theta, std::span<const TrainingCase> cases);

void to_json(nlohmann::json& j, const ToyScorer& s);
void from_json(const nlohmann::json& j, ToyScorer& s);

}  // namespace dbt
