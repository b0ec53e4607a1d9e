#include "dbt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dbt/common.hpp"
#include "dbt/json_util.hpp"

namespace dbt {

namespace {

enum RunStream : std::uint64_t {
    kTrainCohort = 1,
    kEvalCohort = 2,
    kTraining = 3,
    kBootstrap = 4,
    kSizeMatched = 5,
};

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

struct PreparedCase {
    ImageGrid optimized;
    ImageGrid center;
    ImageGrid projection;
    double slice_max = 0.0;
};

// Condenses every volume and derives the three 2D representations, all in the
// normalized intensity range the scorers expect.
std::vector<PreparedCase> prepare(const std::vector<Phantom>& cohort,
                                  const std::vector<std::vector<ScoredBox>>& pooled, double score_threshold,
                                  double iou_threshold) {
    std::vector<std::optional<PreparedCase>> slots(cohort.size());
    parallel_for(cohort.size(), [&](std::size_t i) {
        const Volume& vol = cohort[i].volume;
        const auto kept = aggregate_pooled(pooled[i], score_threshold, iou_threshold);
        const OptimizedImage opt = build_optimized_image(vol, kept);
        const ImageGrid& center = vol.slice(center_slice_index(vol.slice_count()));
        slots[i] = PreparedCase{normalize_range(opt.image), normalize_range(center), project_dm(vol),
                                mil_image_score(pooled[i])};
    });
    std::vector<PreparedCase> out;
    out.reserve(slots.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

ToyScorer fit_head(const std::vector<ImageGrid>& images, const std::vector<bool>& labels,
                   const CondensationStudyConfig& cfg, const ReferenceDetectorParams& candidates, std::uint64_t key) {
    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.iterations = cfg.iterations;
    tc.seed = derive_seed(cfg.train_seed, key);
    tc.datasets = {TrainingDataset{"train", make_training_cases(images, labels, candidates, cfg.flip_augment)}};
    return train(tc).scorer;
}

std::vector<double> score_images(const ToyScorer& head, const ReferenceDetectorParams& candidates,
                                 const std::vector<ImageGrid>& images) {
    const std::vector<ScorerHandle> scorers{std::make_shared<ToyMilScorer>(head, candidates)};
    std::vector<double> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) { out[i] = ensemble_image_score(scorers, images[i]); });
    return out;
}

void write_pathways_csv(const std::filesystem::path& path, const std::vector<PathwayScores>& cases) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "case_id,label,tumor_size_mm,optimized,center_slice,projection,slice_max\n";
    for (const auto& c : cases) {
        out << c.case_id << ',' << (c.label ? 1 : 0) << ','
            << (c.tumor_size_mm ? format_double(*c.tumor_size_mm) : "") << ',' << format_double(c.optimized) << ','
            << format_double(c.center) << ',' << format_double(c.projection) << ',' << format_double(c.slice_max)
            << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

// ---- manifests ---------------------------------------------------------------

nlohmann::json make_manifest(const std::string& command, const nlohmann::json& config, std::uint64_t seed) {
    return {{"tool", "dbt"},
            {"version", kToolVersion},
            {"command", command},
            {"seed", seed},
            {"config_hash", fnv1a_hex(config.dump())},
            {"config", config}};
}

void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed) {
    ensure_dir(dir);
    save_json(dir / "manifest.json", make_manifest(command, config, seed));
}

// ---- cohorts on disk -----------------------------------------------------------

void write_cohort(const std::filesystem::path& dir, const std::vector<Phantom>& cohort) {
    ensure_dir(dir);
    std::vector<PhantomTruth> truths;
    truths.reserve(cohort.size());
    parallel_for(cohort.size(), [&](std::size_t i) { write_volume(dir / cohort[i].truth.case_id, cohort[i].volume); });
    for (const auto& p : cohort) truths.push_back(p.truth);
    write_truth(dir / "truth.json", truths);
}

std::vector<CohortCase> read_cohort_index(const std::filesystem::path& dir) {
    std::vector<CohortCase> out;
    for (auto& t : read_truth(dir / "truth.json")) {
        auto vdir = dir / t.case_id;
        out.push_back({std::move(t), std::move(vdir)});
    }
    return out;
}

// ---- training sets -------------------------------------------------------------

std::vector<TrainingCase> make_training_cases(const std::vector<ImageGrid>& images, const std::vector<bool>& labels,
                                              const ReferenceDetectorParams& candidate_params, bool flip_augment) {
    if (images.size() != labels.size()) throw std::invalid_argument("make_training_cases: images/labels mismatch");
    const ToyMilScorer generator(ToyScorer{}, candidate_params);
    const std::size_t per = flip_augment ? 2 : 1;
    std::vector<TrainingCase> out(images.size() * per);
    parallel_for(images.size(), [&](std::size_t i) {
        out[i * per] = {generator.candidate_features(images[i]), labels[i]};
        if (flip_augment) out[i * per + 1] = {generator.candidate_features(hflip(images[i])), labels[i]};
    });
    return out;
}

// ---- condensation study -------------------------------------------------------

CondensationStudy run_condensation_study(const CondensationStudyConfig& cfg) {
    const ReferenceDetector detector(cfg.detector);
    const ReferenceDetectorParams candidates = permissive_candidate_params(cfg.detector);

    const auto train_cohort = generate_cohort(cfg.train_cohort);
    const auto eval_cohort = generate_cohort(cfg.eval_cohort);

    auto pool = [&](const std::vector<Phantom>& cohort) {
        std::vector<std::vector<ScoredBox>> pooled(cohort.size());
        parallel_for(cohort.size(), [&](std::size_t i) { pooled[i] = detect_slices(cohort[i].volume, detector); });
        return pooled;
    };
    const auto train_pooled = pool(train_cohort);
    const auto eval_pooled = pool(eval_cohort);

    CondensationStudy study;
    std::vector<ValidationCase> validation;
    for (std::size_t i = 0; i < train_cohort.size(); ++i) {
        validation.push_back({mil_image_score(train_pooled[i]), train_cohort[i].truth.label});
    }
    study.score_threshold = choose_score_threshold(validation, cfg.target_sensitivity);

    const auto train_prep = prepare(train_cohort, train_pooled, study.score_threshold, cfg.iou_threshold);
    const auto eval_prep = prepare(eval_cohort, eval_pooled, study.score_threshold, cfg.iou_threshold);

    std::vector<bool> train_labels;
    for (const auto& p : train_cohort) train_labels.push_back(p.truth.label);
    auto column = [](const std::vector<PreparedCase>& prep, ImageGrid PreparedCase::*member) {
        std::vector<ImageGrid> out;
        out.reserve(prep.size());
        for (const auto& p : prep) out.push_back(p.*member);
        return out;
    };

    study.optimized_head = fit_head(column(train_prep, &PreparedCase::optimized), train_labels, cfg, candidates, 1);
    study.center_head = fit_head(column(train_prep, &PreparedCase::center), train_labels, cfg, candidates, 2);
    study.projection_head = fit_head(column(train_prep, &PreparedCase::projection), train_labels, cfg, candidates, 3);

    const auto opt = score_images(study.optimized_head, candidates, column(eval_prep, &PreparedCase::optimized));
    const auto cen = score_images(study.center_head, candidates, column(eval_prep, &PreparedCase::center));
    const auto proj = score_images(study.projection_head, candidates, column(eval_prep, &PreparedCase::projection));

    for (std::size_t i = 0; i < eval_cohort.size(); ++i) {
        const auto& t = eval_cohort[i].truth;
        PathwayScores s;
        s.case_id = t.case_id;
        s.label = t.label;
        if (t.label) s.tumor_size_mm = t.largest_malignant_size_mm();
        s.optimized = opt[i];
        s.center = cen[i];
        s.projection = proj[i];
        s.slice_max = eval_prep[i].slice_max;
        study.cases.push_back(std::move(s));
    }
    return study;
}

// ---- run config ----------------------------------------------------------------

void validate(const RunConfig& c) {
    if (!(c.iou_threshold >= 0.0 && c.iou_threshold <= 1.0)) {
        throw ConfigError("iou_threshold must lie in [0, 1], got " + format_double(c.iou_threshold));
    }
    if (!(c.target_sensitivity >= 0.0 && c.target_sensitivity <= 1.0)) {
        throw ConfigError("target_sensitivity must lie in [0, 1], got " + format_double(c.target_sensitivity));
    }
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (c.n_resamples < 1) throw ConfigError("n_resamples must be >= 1");
    if (c.n_populations < 1) throw ConfigError("n_populations must be >= 1");
    if (c.train_cancer < 1 || c.train_negative < 1) throw ConfigError("training cohort needs both classes");
    if (c.cohort.n_cancer < 2 || c.cohort.n_negative < 2) {
        throw ConfigError("evaluation cohort needs at least two cases of each class");
    }
    if (c.output_dir.empty()) throw ConfigError("output_dir must be set");
    validate(c.cohort);
    (void)ReferenceDetector(c.detector);
    SizeHistogram bins{c.size_edges, std::vector<double>(c.size_edges.size() + 1, 1.0)};
    if (c.size_target) bins.shares = *c.size_target;
    bins.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"output_dir", c.output_dir.string()},
         {"seed", c.seed},
         {"cohort", c.cohort},
         {"training", {{"n_cancer", c.train_cancer},
                       {"n_negative", c.train_negative},
                       {"learning_rate", c.learning_rate},
                       {"iterations", c.iterations}}},
         {"detector", c.detector},
         {"condense", {{"iou_threshold", c.iou_threshold}, {"target_sensitivity", c.target_sensitivity}}},
         {"stats", {{"n_resamples", c.n_resamples}, {"n_populations", c.n_populations}, {"size_edges", c.size_edges}}}};
    if (c.size_target) j["stats"]["size_target"] = *c.size_target;
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    check_keys(j, {"output_dir", "seed", "cohort", "training", "detector", "condense", "stats"}, "run config");
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    read_field(j, "seed", c.seed);
    read_field(j, "cohort", c.cohort);
    read_field(j, "detector", c.detector);
    if (const auto it = j.find("training"); it != j.end()) {
        check_keys(*it, {"n_cancer", "n_negative", "learning_rate", "iterations"}, "training");
        read_field(*it, "n_cancer", c.train_cancer);
        read_field(*it, "n_negative", c.train_negative);
        read_field(*it, "learning_rate", c.learning_rate);
        read_field(*it, "iterations", c.iterations);
    }
    if (const auto it = j.find("condense"); it != j.end()) {
        check_keys(*it, {"iou_threshold", "target_sensitivity"}, "condense");
        read_field(*it, "iou_threshold", c.iou_threshold);
        read_field(*it, "target_sensitivity", c.target_sensitivity);
    }
    if (const auto it = j.find("stats"); it != j.end()) {
        check_keys(*it, {"n_resamples", "n_populations", "size_edges", "size_target"}, "stats");
        read_field(*it, "n_resamples", c.n_resamples);
        read_field(*it, "n_populations", c.n_populations);
        read_field(*it, "size_edges", c.size_edges);
        if (it->contains("size_target")) c.size_target = it->at("size_target").get<std::vector<double>>();
    }
}

CondensationStudyConfig study_config(const RunConfig& c) {
    CondensationStudyConfig s;
    s.train_cohort = c.cohort;
    s.train_cohort.n_cancer = c.train_cancer;
    s.train_cohort.n_negative = c.train_negative;
    s.train_cohort.seed = derive_seed(c.seed, kTrainCohort);
    s.train_cohort.id_prefix = c.cohort.id_prefix + "_train";
    s.eval_cohort = c.cohort;
    s.eval_cohort.seed = derive_seed(c.seed, kEvalCohort);
    s.detector = c.detector;
    s.iou_threshold = c.iou_threshold;
    s.target_sensitivity = c.target_sensitivity;
    s.learning_rate = c.learning_rate;
    s.iterations = c.iterations;
    s.train_seed = derive_seed(c.seed, kTraining);
    return s;
}

nlohmann::json auc_summary(std::span<const CaseRecord> cases, const BootstrapOptions& opts) {
    const RocAnalysis roc = roc_and_auc(cases);
    const BootstrapResult b = bootstrap_auc(cases, opts);
    return {{"auc", roc.auc},
            {"ci_lo", b.lo},
            {"ci_hi", b.hi},
            {"confidence", opts.confidence},
            {"n_resamples", opts.n_resamples},
            {"n_positive", roc.n_positive},
            {"n_negative", roc.n_negative},
            {"redraws", b.redraws}};
}

nlohmann::json delong_summary(const DeLongResult& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"auc_a", r.auc_a},         {"auc_b", r.auc_b}, {"var_a", r.var_a},   {"var_b", r.var_b},
            {"covariance", r.cov_ab},   {"z", num(r.z)},    {"p", num(r.p)},      {"degenerate", r.degenerate}};
}

nlohmann::json run_pipeline(const RunConfig& cfg) {
    validate(cfg);
    const std::filesystem::path& out = cfg.output_dir;
    ensure_dir(out);

    const CondensationStudy study = run_condensation_study(study_config(cfg));

    std::vector<CaseRecord> records;
    std::vector<double> opt, cen, proj, smax;
    std::vector<bool> labels;
    for (const auto& c : study.cases) {
        records.push_back({c.case_id, c.label, c.optimized, c.tumor_size_mm, {}});
        opt.push_back(c.optimized);
        cen.push_back(c.center);
        proj.push_back(c.projection);
        smax.push_back(c.slice_max);
        labels.push_back(c.label);
    }

    write_pathways_csv(out / "pathways.csv", study.cases);
    write_cases_csv(out / "cases.csv", records);
    const RocAnalysis roc = roc_and_auc(records);
    write_roc_csv(out / "roc.csv", roc);
    write_roc_svg(out / "roc.svg", roc);

    nlohmann::json scorer = ToyMilScorer(study.optimized_head, permissive_candidate_params(cfg.detector)).to_json();
    save_json(out / "toy_scorer.json", scorer);

    BootstrapOptions bo;
    bo.n_resamples = cfg.n_resamples;
    bo.seed = derive_seed(cfg.seed, kBootstrap);

    nlohmann::json pathways = nlohmann::json::object();
    auto add_pathway = [&](const std::string& name, const std::vector<double>& scores) {
        std::vector<CaseRecord> rs = records;
        for (std::size_t i = 0; i < rs.size(); ++i) rs[i].score = scores[i];
        pathways[name] = auc_summary(rs, bo);
    };
    add_pathway("optimized", opt);
    add_pathway("center_slice", cen);
    add_pathway("projection", proj);
    add_pathway("slice_max", smax);

    nlohmann::json summary;
    summary["score_threshold"] = study.score_threshold;
    summary["pathways"] = pathways;
    summary["delong"] = {{"optimized_vs_center_slice", delong_summary(delong_test(opt, cen, labels))},
                         {"optimized_vs_projection", delong_summary(delong_test(opt, proj, labels))},
                         {"optimized_vs_slice_max", delong_summary(delong_test(opt, smax, labels))}};

    if (cfg.size_target) {
        SizeHistogram target{cfg.size_edges, *cfg.size_target};
        const auto r = size_matched_auc(records, target, cfg.n_populations, derive_seed(cfg.seed, kSizeMatched));
        summary["size_matched"] = {{"mean_auc", r.mean_auc},
                                   {"sd_auc", r.sd_auc},
                                   {"n_populations", r.n_populations},
                                   {"mean_tv_distance", r.mean_tv_distance},
                                   {"source_shares", r.source_shares},
                                   {"target_shares", r.target_shares}};
    }
    save_json(out / "summary.json", summary);

    nlohmann::json config = cfg;
    write_manifest(out, "report", config, cfg.seed);
    return summary;
}

}  // namespace dbt
