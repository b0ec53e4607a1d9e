#include "dbt/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dbt/json_util.hpp"

namespace dbt {

namespace {

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

std::vector<FeatureVector> features_for(const ImageGrid& img, std::span<const ScoredBox> boxes) {
    std::vector<FeatureVector> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) out.push_back(extract_patch_features(img, b));
    return out;
}

}  // namespace

PixelSpan pixel_span(const ScoredBox& b, std::size_t width, std::size_t height) {
    const auto w = static_cast<double>(width);
    const auto h = static_cast<double>(height);
    PixelSpan s;
    s.clipped = b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h;
    s.x0 = static_cast<std::size_t>(std::clamp(std::ceil(b.x_min - 0.5), 0.0, w));
    s.x1 = static_cast<std::size_t>(std::clamp(std::ceil(b.x_max - 0.5), 0.0, w));
    s.y0 = static_cast<std::size_t>(std::clamp(std::ceil(b.y_min - 0.5), 0.0, h));
    s.y1 = static_cast<std::size_t>(std::clamp(std::ceil(b.y_max - 0.5), 0.0, h));
    return s;
}

FeatureVector extract_patch_features(const ImageGrid& img, const ScoredBox& box) {
    validate(box);
    const PixelSpan span = pixel_span(box, img.width(), img.height());
    if (span.empty()) throw std::invalid_argument("extract_patch_features: box covers no pixel of the image");

    const double cx = box.center_x();
    const double cy = box.center_y();
    const double half_w = 0.25 * box.width();
    const double half_h = 0.25 * box.height();

    double sum = 0.0, center_sum = 0.0, border_sum = 0.0;
    std::size_t n = 0, n_center = 0, n_border = 0;
    for (std::size_t y = span.y0; y < span.y1; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        for (std::size_t x = span.x0; x < span.x1; ++x) {
            const double v = img(x, y);
            sum += v;
            ++n;
            const double px = static_cast<double>(x) + 0.5;
            if (std::abs(px - cx) <= half_w && std::abs(py - cy) <= half_h) {
                center_sum += v;
                ++n_center;
            } else {
                border_sum += v;
                ++n_border;
            }
        }
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t y = span.y0; y < span.y1; ++y) {
        for (std::size_t x = span.x0; x < span.x1; ++x) {
            const double d = img(x, y) - mean;
            ss += d * d;
        }
    }
    const double stddev = std::sqrt(ss / static_cast<double>(n));
    const double contrast = (n_center > 0 && n_border > 0)
                                ? center_sum / static_cast<double>(n_center) - border_sum / static_cast<double>(n_border)
                                : 0.0;

    return {mean / FeatureScaling::kMeanScale, stddev / FeatureScaling::kStdScale,
            contrast / FeatureScaling::kContrastScale,
            (std::log(box.area()) - FeatureScaling::kLogAreaOffset) / FeatureScaling::kLogAreaScale};
}

double ToyScorer::logit(const FeatureVector& f) const {
    double z = bias;
    for (std::size_t i = 0; i < kFeatureCount; ++i) z += weights[i] * f[i];
    return z;
}

std::array<double, ToyScorer::kParameterCount> ToyScorer::parameters() const {
    std::array<double, kParameterCount> p{};
    std::copy(weights.begin(), weights.end(), p.begin());
    p.back() = bias;
    return p;
}

ToyScorer ToyScorer::from_parameters(std::span<const double> p) {
    if (p.size() != kParameterCount) throw std::invalid_argument("ToyScorer: wrong parameter count");
    ToyScorer s;
    std::copy(p.begin(), p.begin() + kFeatureCount, s.weights.begin());
    s.bias = p.back();
    return s;
}

MilForward mil_forward(const ToyScorer& theta, std::span<const FeatureVector> candidates) {
    if (candidates.empty()) throw std::invalid_argument("mil_forward: at least one candidate required");
    MilForward out;
    out.max_logit = theta.logit(candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double z = theta.logit(candidates[i]);
        if (z > out.max_logit) {
            out.max_logit = z;
            out.argmax = i;
        }
    }
    out.score = logistic(out.max_logit);
    return out;
}

MilForward mil_forward(const ToyScorer& theta, const ImageGrid& img, std::span<const ScoredBox> candidates) {
    const auto f = features_for(img, candidates);
    return mil_forward(theta, f);
}

MilLossGrad mil_loss_grad(const ToyScorer& theta, std::span<const FeatureVector> candidates, bool label) {
    const MilForward fwd = mil_forward(theta, candidates);
    MilLossGrad out;
    out.argmax = fwd.argmax;
    out.loss = label ? softplus(-fwd.max_logit) : softplus(fwd.max_logit);
    const double residual = fwd.score - (label ? 1.0 : 0.0);
    const auto& f = candidates[fwd.argmax];
    for (std::size_t i = 0; i < kFeatureCount; ++i) out.grad[i] = residual * f[i];
    out.grad.back() = residual;
    return out;
}

MilLossGrad mil_loss_grad(const ToyScorer& theta, const ImageGrid& img, std::span<const ScoredBox> candidates,
                          bool label) {
    const auto f = features_for(img, candidates);
    return mil_loss_grad(theta, f, label);
}

// ---- balanced sampling -----------------------------------------------------

BalancedSampler::BalancedSampler(std::span<const TrainingDataset> datasets) {
    std::vector<std::vector<bool>> labels;
    for (const auto& d : datasets) {
        auto& l = labels.emplace_back();
        for (const auto& c : d.cases) l.push_back(c.label);
    }
    init(labels);
}

BalancedSampler::BalancedSampler(const std::vector<std::vector<bool>>& labels) { init(labels); }

void BalancedSampler::init(const std::vector<std::vector<bool>>& labels) {
    if (labels.empty()) throw std::invalid_argument("BalancedSampler: no datasets");
    double total = 0.0;
    for (std::size_t d = 0; d < labels.size(); ++d) {
        Pool pool;
        for (std::size_t i = 0; i < labels[d].size(); ++i) (labels[d][i] ? pool.cancer : pool.negative).push_back(i);
        if (pool.cancer.empty() || pool.negative.empty()) {
            throw std::invalid_argument("BalancedSampler: dataset " + std::to_string(d) +
                                        " needs at least one cancer and one non-cancer case");
        }
        total += static_cast<double>(pool.cancer.size());
        cumulative_.push_back(total);
        pools_.push_back(std::move(pool));
    }
    for (double& c : cumulative_) c /= total;
    cumulative_.back() = 1.0;
}

CaseRef BalancedSampler::sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const auto d = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                                     static_cast<std::ptrdiff_t>(pools_.size() - 1)));
    const Pool& pool = pools_[d];
    const auto& cls = rng.uniform() < 0.5 ? pool.cancer : pool.negative;
    return {d, cls[rng.below(cls.size())]};
}

// ---- training --------------------------------------------------------------

TrainResult train(const TrainConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
        throw std::invalid_argument("train: learning_rate must be finite and non-negative");
    }
    const BalancedSampler sampler(cfg.datasets);
    Rng rng(cfg.seed);

    TrainResult result;
    result.scorer = cfg.initial;
    result.loss_trajectory.reserve(cfg.iterations);
    auto params = result.scorer.parameters();

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const CaseRef ref = sampler.sample(rng);
        const TrainingCase& c = cfg.datasets[ref.dataset].cases[ref.index];
        if (c.candidates.empty()) {
            throw std::invalid_argument("train: case " + std::to_string(ref.index) + " of dataset '" +
                                        cfg.datasets[ref.dataset].name + "' has no candidates");
        }
        const MilLossGrad lg = mil_loss_grad(ToyScorer::from_parameters(params), c.candidates, c.label);
        if (!std::isfinite(lg.loss)) throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
        result.loss_trajectory.push_back(lg.loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
            params[p] -= cfg.learning_rate * lg.grad[p];
            if (!std::isfinite(params[p])) {
                throw NumericError("train: parameters diverged at iteration " + std::to_string(it));
            }
        }
    }
    result.scorer = ToyScorer::from_parameters(params);
    return result;
}

double balanced_loss(const ToyScorer& theta, std::span<const TrainingCase> cases) {
    double sums[2] = {0.0, 0.0};
    std::size_t counts[2] = {0, 0};
    for (const auto& c : cases) {
        const double loss = mil_loss_grad(theta, c.candidates, c.label).loss;
        sums[c.label ? 1 : 0] += loss;
        ++counts[c.label ? 1 : 0];
    }
    if (counts[0] == 0 || counts[1] == 0) throw std::invalid_argument("balanced_loss: both classes required");
    return 0.5 * (sums[0] / static_cast<double>(counts[0]) + sums[1] / static_cast<double>(counts[1]));
}

void to_json(nlohmann::json& j, const ToyScorer& s) { j = {{"weights", s.weights}, {"bias", s.bias}}; }

void from_json(const nlohmann::json& j, ToyScorer& s) {
    check_keys(j, {"weights", "bias"}, "toy scorer");
    s.weights = j.at("weights").get<FeatureVector>();
    s.bias = j.at("bias").get<double>();
}

}  // namespace dbt
