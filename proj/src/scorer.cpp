#include "dbt/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dbt/common.hpp"
#include "dbt/json_util.hpp"

namespace dbt {

namespace {

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Vertex offset of the parabola through (-1, a), (0, b), (1, c).
double parabolic_offset(double a, double b, double c) {
    const double denom = a - 2.0 * b + c;
    if (!(denom < 0.0)) return 0.0;
    return std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
}

ScoredBox centered_box(double cx, double cy, double side, double score, std::size_t w, std::size_t h) {
    const double half = 0.5 * side;
    ScoredBox b;
    b.x_min = std::max(0.0, cx - half);
    b.y_min = std::max(0.0, cy - half);
    b.x_max = std::min(static_cast<double>(w), cx + half);
    b.y_max = std::min(static_cast<double>(h), cy + half);
    b.score = score;
    return b;
}

}  // namespace

void to_json(nlohmann::json& j, const ReferenceDetectorParams& p) {
    j = {{"lesion_radius", p.lesion_radius},         {"inner_sigma_factor", p.inner_sigma_factor},
         {"outer_sigma_factor", p.outer_sigma_factor}, {"response_floor", p.response_floor},
         {"score_midpoint", p.score_midpoint},       {"score_scale", p.score_scale},
         {"box_scale", p.box_scale}};
}

void from_json(const nlohmann::json& j, ReferenceDetectorParams& p) {
    check_keys(j, {"lesion_radius", "inner_sigma_factor", "outer_sigma_factor", "response_floor", "score_midpoint",
                   "score_scale", "box_scale"},
               "reference detector");
    read_field(j, "lesion_radius", p.lesion_radius);
    read_field(j, "inner_sigma_factor", p.inner_sigma_factor);
    read_field(j, "outer_sigma_factor", p.outer_sigma_factor);
    read_field(j, "response_floor", p.response_floor);
    read_field(j, "score_midpoint", p.score_midpoint);
    read_field(j, "score_scale", p.score_scale);
    read_field(j, "box_scale", p.box_scale);
}

ReferenceDetector::ReferenceDetector(ReferenceDetectorParams params) : params_(params) {
    const auto& p = params_;
    if (!(p.lesion_radius > 0.0) || !(p.inner_sigma_factor > 0.0) || !(p.outer_sigma_factor > p.inner_sigma_factor) ||
        !(p.score_scale > 0.0) || !(p.box_scale > 0.0)) {
        throw ConfigError("reference detector: radius, scales and box size must be positive, outer > inner sigma");
    }
}

ImageGrid ReferenceDetector::response(const ImageGrid& img) const {
    const ImageGrid inner = gaussian_blur(img, params_.inner_sigma_factor * params_.lesion_radius);
    const ImageGrid outer = gaussian_blur(img, params_.outer_sigma_factor * params_.lesion_radius);
    std::vector<double> r(img.size());
    const auto a = inner.data();
    const auto b = outer.data();
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = a[i] - b[i];
    return ImageGrid(img.width(), img.height(), std::move(r));
}

std::vector<ScoredBox> ReferenceDetector::detect(const ImageGrid& img) const {
    const ImageGrid r = response(img);
    const std::size_t w = r.width();
    const std::size_t h = r.height();
    const double side = params_.box_scale * params_.lesion_radius;

    std::vector<ScoredBox> boxes;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double v = r(x, y);
            if (!(v > params_.response_floor)) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
                    const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
                    if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(w) || ny >= static_cast<std::ptrdiff_t>(h)) {
                        continue;
                    }
                    if (!(v > r(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny)))) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (!is_max) continue;

            double cx = static_cast<double>(x) + 0.5;
            double cy = static_cast<double>(y) + 0.5;
            if (x > 0 && x + 1 < w) cx += parabolic_offset(r(x - 1, y), v, r(x + 1, y));
            if (y > 0 && y + 1 < h) cy += parabolic_offset(r(x, y - 1), v, r(x, y + 1));
            const double score = logistic((v - params_.score_midpoint) / params_.score_scale);
            ScoredBox b = centered_box(cx, cy, side, score, w, h);
            if (b.x_min < b.x_max && b.y_min < b.y_max) boxes.push_back(b);
        }
    }
    return boxes;
}

nlohmann::json ReferenceDetector::to_json() const { return {{"type", "reference"}, {"params", params_}}; }

ReferenceDetectorParams permissive_candidate_params(ReferenceDetectorParams base) {
    base.response_floor = 0.5;
    return base;
}

ToyMilScorer::ToyMilScorer(ToyScorer head, ReferenceDetectorParams candidate_params)
    : head_(head), detector_(candidate_params) {}

std::vector<ScoredBox> ToyMilScorer::candidates(const ImageGrid& img) const {
    auto boxes = detector_.detect(img);
    if (boxes.empty()) {
        const auto& p = detector_.params();
        boxes.push_back(centered_box(0.5 * static_cast<double>(img.width()), 0.5 * static_cast<double>(img.height()),
                                     p.box_scale * p.lesion_radius, 0.0, img.width(), img.height()));
    }
    return boxes;
}

std::vector<FeatureVector> ToyMilScorer::candidate_features(const ImageGrid& img) const {
    std::vector<FeatureVector> f;
    for (const auto& b : candidates(img)) f.push_back(extract_patch_features(img, b));
    return f;
}

std::vector<ScoredBox> ToyMilScorer::detect(const ImageGrid& img) const {
    auto boxes = candidates(img);
    for (auto& b : boxes) b.score = logistic(head_.logit(extract_patch_features(img, b)));
    return boxes;
}

nlohmann::json ToyMilScorer::to_json() const {
    return {{"type", "toy_mil"}, {"head", head_}, {"candidate_detector", detector_.params()}};
}

ScorerHandle make_reference_scorer(ReferenceDetectorParams params) {
    return std::make_shared<ReferenceDetector>(params);
}

ScorerHandle scorer_from_json(const nlohmann::json& j) {
    const auto type = j.value("type", std::string{});
    if (type == "reference") {
        return make_reference_scorer(j.value("params", ReferenceDetectorParams{}));
    }
    if (type == "toy_mil") {
        return std::make_shared<ToyMilScorer>(j.at("head").get<ToyScorer>(),
                                              j.value("candidate_detector", permissive_candidate_params()));
    }
    throw ConfigError("unknown scorer type '" + type + "'");
}

ScorerHandle load_scorer(const std::string& spec) {
    if (spec == "reference") return make_reference_scorer();
    return scorer_from_json(load_json(spec));
}

// ---- aggregation -----------------------------------------------------------

double mil_image_score(std::span<const ScoredBox> boxes) {
    double best = 0.0;
    for (const auto& b : boxes) best = std::max(best, b.score);
    return best;
}

double ensemble_image_score(std::span<const ScorerHandle> scorers, const ImageGrid& img) {
    if (scorers.empty()) throw std::invalid_argument("ensemble_image_score: at least one scorer required");
    const ImageGrid flipped = hflip(img);
    double sum = 0.0;
    for (const auto& s : scorers) {
        sum += mil_image_score(s->detect(img));
        sum += mil_image_score(s->detect(flipped));
    }
    return sum / static_cast<double>(2 * scorers.size());
}

std::string to_string(Breast b) { return b == Breast::Left ? "L" : "R"; }

Breast parse_breast(const std::string& s) {
    if (s == "L" || s == "l" || s == "left" || s == "LEFT") return Breast::Left;
    if (s == "R" || s == "r" || s == "right" || s == "RIGHT") return Breast::Right;
    throw ConfigError("unknown laterality '" + s + "'");
}

double breast_score(std::span<const ViewScore> views) {
    if (views.empty()) throw std::invalid_argument("breast_score: at least one view required");
    double sum = 0.0;
    for (const auto& v : views) {
        if (v.breast != views.front().breast) throw std::invalid_argument("breast_score: views from both breasts");
        sum += v.score;
    }
    return sum / static_cast<double>(views.size());
}

double study_score(std::span<const double> breasts) {
    if (breasts.empty() || breasts.size() > 2) {
        throw std::invalid_argument("study_score: expected 1 or 2 breast scores, got " +
                                    std::to_string(breasts.size()));
    }
    return *std::max_element(breasts.begin(), breasts.end());
}

// ---- study scoring ---------------------------------------------------------

ImageGrid preprocess(const ImageGrid& raw, const PreprocessConfig& cfg) {
    ImageGrid img = cfg.target_height > 0 ? resize_to_height(raw, cfg.target_height) : raw;
    if (cfg.crop) img = crop_background(img, cfg.background_threshold).first;
    return normalize_range(img);
}

std::vector<StudyEntry> read_study_manifest(const std::filesystem::path& path) {
    const auto j = load_json(path);
    check_keys(j, {"studies"}, "study manifest");
    const auto base = path.parent_path();
    std::vector<StudyEntry> out;
    for (const auto& s : j.at("studies")) {
        check_keys(s, {"case_id", "label", "tumor_size_mm", "views"}, "study");
        StudyEntry e;
        e.case_id = s.at("case_id").get<std::string>();
        if (s.contains("label")) e.label = s.at("label").get<bool>();
        if (s.contains("tumor_size_mm") && !s.at("tumor_size_mm").is_null()) {
            e.tumor_size_mm = s.at("tumor_size_mm").get<double>();
        }
        for (const auto& v : s.at("views")) {
            check_keys(v, {"path", "laterality", "view"}, "view");
            StudyView sv;
            sv.image = v.at("path").get<std::string>();
            if (sv.image.is_relative()) sv.image = base / sv.image;
            sv.breast = parse_breast(v.at("laterality").get<std::string>());
            sv.view = v.value("view", std::string{});
            e.views.push_back(std::move(sv));
        }
        if (e.views.empty()) throw ConfigError("study " + e.case_id + ": no views");
        out.push_back(std::move(e));
    }
    return out;
}

void write_study_manifest(const std::filesystem::path& path, const std::vector<StudyEntry>& studies) {
    const auto base = path.parent_path();
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : studies) {
        nlohmann::json e;
        e["case_id"] = s.case_id;
        if (s.label) e["label"] = *s.label;
        if (s.tumor_size_mm) e["tumor_size_mm"] = *s.tumor_size_mm;
        e["views"] = nlohmann::json::array();
        for (const auto& v : s.views) {
            e["views"].push_back({{"path", v.image.lexically_relative(base).generic_string()},
                                  {"laterality", to_string(v.breast)},
                                  {"view", v.view}});
        }
        arr.push_back(std::move(e));
    }
    save_json(path, {{"studies", arr}});
}

std::vector<StudyScores> score_studies(const std::vector<StudyEntry>& studies, std::span<const ScorerHandle> scorers,
                                       const PreprocessConfig& prep) {
    struct Job {
        std::size_t study;
        std::size_t view;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < studies.size(); ++s) {
        for (std::size_t v = 0; v < studies[s].views.size(); ++v) jobs.push_back({s, v});
    }
    std::vector<double> view_scores(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto& view = studies[jobs[i].study].views[jobs[i].view];
        view_scores[i] = ensemble_image_score(scorers, preprocess(read_pgm(view.image), prep));
    });

    std::vector<StudyScores> out;
    std::size_t next = 0;
    for (const auto& s : studies) {
        StudyScores sc{s.case_id, s.label, s.tumor_size_mm, {}, {}, 0.0};
        for (const auto& v : s.views) sc.views.push_back({s.case_id, v.breast, v.view, view_scores[next++]});
        std::vector<double> per_breast;
        for (const Breast b : {Breast::Left, Breast::Right}) {
            std::vector<ViewScore> mine;
            std::copy_if(sc.views.begin(), sc.views.end(), std::back_inserter(mine),
                         [b](const ViewScore& v) { return v.breast == b; });
            if (mine.empty()) continue;
            const double bs = breast_score(mine);
            sc.breasts.emplace_back(b, bs);
            per_breast.push_back(bs);
        }
        sc.study = study_score(per_breast);
        out.push_back(std::move(sc));
    }
    return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<StudyScores>& scores) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "level,case_id,breast,view,score\n";
    for (const auto& s : scores) {
        for (const auto& v : s.views) {
            out << "view," << s.case_id << ',' << to_string(v.breast) << ',' << v.view << ',' << format_double(v.score)
                << '\n';
        }
        for (const auto& [b, score] : s.breasts) {
            out << "breast," << s.case_id << ',' << to_string(b) << ",," << format_double(score) << '\n';
        }
        out << "study," << s.case_id << ",,," << format_double(s.study) << '\n';
    }
}

}  // namespace dbt
