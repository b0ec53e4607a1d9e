// dbt: phantom generation, DBT condensation, MIL scoring, toy training and
// reader-study statistics from one binary.
//
// Exit codes: 0 ok, 2 config/usage error, 3 I/O error, 4 numeric failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbt/common.hpp"
#include "dbt/condense.hpp"
#include "dbt/json_util.hpp"
#include "dbt/mil.hpp"
#include "dbt/phantom.hpp"
#include "dbt/pipeline.hpp"
#include "dbt/scorer.hpp"
#include "dbt/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitOther = 1;

// ---- flag files ----------------------------------------------------------------

std::string json_scalar(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw dbt::ConfigError("config key '" + key + "': expected a string, number or boolean");
}

// Fills every option of `cmd` that was not given on the command line from a
// flat JSON object whose keys are option names (dashes or underscores).
void apply_flag_file(CLI::App& cmd, const std::string& path) {
    const json j = dbt::load_json(path);
    if (!j.is_object()) throw dbt::ConfigError(path + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        CLI::Option* opt = name == "config" ? nullptr : cmd.get_option_no_throw("--" + name);
        if (opt == nullptr) throw dbt::ConfigError(path + ": unknown key '" + key + "' for '" + cmd.get_name() + "'");
        if (opt->count() > 0) continue;
        std::vector<std::string> inputs;
        if (value.is_array()) {
            for (const auto& v : value) inputs.push_back(json_scalar(v, key));
        } else {
            inputs.push_back(json_scalar(value, key));
        }
        try {
            opt->add_result(inputs);
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw dbt::ConfigError(path + ": key '" + key + "': " + e.what());
        }
    }
}

CLI::Option* add_flag_file(CLI::App& cmd, std::string& path) {
    return cmd.add_option("--config", path, "JSON file of option values; command-line flags take precedence");
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw dbt::ConfigError(msg);
}

void require_unit(double v, const std::string& name) {
    require(v >= 0.0 && v <= 1.0, name + " must lie in [0, 1], got " + dbt::format_double(v));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw dbt::IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dbt::IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw dbt::IoError("write failed: " + path.string());
}

// ---- phantom gen -------------------------------------------------------------

struct PhantomGenOptions {
    std::string config;
    std::string out;
    dbt::CohortConfig cohort;
};

void setup_phantom_gen(CLI::App& parent, PhantomGenOptions& o) {
    auto* cmd = parent.add_subcommand("gen", "Generate a seeded cohort of phantom volumes with ground truth");
    auto& c = o.cohort;
    auto& p = c.phantom;
    add_flag_file(*cmd, o.config);
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--n-cancer", c.n_cancer, "Cases with a malignant lesion")->capture_default_str();
    cmd->add_option("--n-negative", c.n_negative, "Lesion-free cases")->capture_default_str();
    cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    cmd->add_option("--id-prefix", c.id_prefix, "Case id prefix")->capture_default_str();
    cmd->add_option("--width", p.width, "Slice width (pixels)")->capture_default_str();
    cmd->add_option("--height", p.height, "Slice height (pixels)")->capture_default_str();
    cmd->add_option("--slices", p.n_slices, "Slices per volume")->capture_default_str();
    cmd->add_option("--texture-scale", p.background_texture_scale, "Tissue texture scale (pixels)")
        ->capture_default_str();
    cmd->add_option("--texture-amplitude", p.texture_amplitude, "Tissue texture std dev")->capture_default_str();
    cmd->add_option("--clutter", p.clutter_density, "Benign distractor blobs per volume")->capture_default_str();
    cmd->add_option("--noise", p.noise_sigma, "Per-slice noise std dev")->capture_default_str();
    cmd->add_option("--radius-min", c.radius_min, "Smallest lesion radius (pixels)")->capture_default_str();
    cmd->add_option("--radius-max", c.radius_max, "Largest lesion radius (pixels)")->capture_default_str();
    cmd->add_option("--contrast-min", c.contrast_min, "Weakest lesion contrast")->capture_default_str();
    cmd->add_option("--contrast-max", c.contrast_max, "Strongest lesion contrast")->capture_default_str();
    cmd->add_option("--extent-min", c.extent_min, "Fewest slices per lesion")->capture_default_str();
    cmd->add_option("--extent-max", c.extent_max, "Most slices per lesion")->capture_default_str();
    cmd->callback([cmd, &o] {
        if (!o.config.empty()) apply_flag_file(*cmd, o.config);
    });
}

void run_phantom_gen(const PhantomGenOptions& o) {
    require(!o.out.empty(), "phantom gen: --out is required");
    dbt::validate(o.cohort);
    const auto cohort = dbt::generate_cohort(o.cohort);
    dbt::write_cohort(o.out, cohort);
    dbt::write_manifest(o.out, "phantom gen", json(o.cohort), o.cohort.seed);
    std::cerr << "wrote " << cohort.size() << " volumes to " << o.out << "\n";
}

// ---- condense run --------------------------------------------------------------

struct CondenseOptions {
    std::string config;
    std::string volume;
    std::string cohort;
    std::string calibration;
    std::string out;
    std::string scorer = "reference";
    double threshold = 0.0;
    double target_sensitivity = dbt::kDefaultTargetSensitivity;
    double iou = dbt::kDefaultIouThreshold;
    CLI::Option* threshold_opt = nullptr;
};

void setup_condense_run(CLI::App& parent, CondenseOptions& o) {
    auto* cmd = parent.add_subcommand("run", "Condense DBT volumes into optimized 2D images");
    add_flag_file(*cmd, o.config);
    cmd->add_option("--volume", o.volume, "A single volume directory");
    cmd->add_option("--cohort", o.cohort, "A cohort directory written by 'phantom gen'");
    cmd->add_option("--out", o.out, "Output directory");
    o.threshold_opt = cmd->add_option("--threshold", o.threshold, "Box score threshold (skips calibration)");
    cmd->add_option("--calibration", o.calibration,
                    "Labelled cohort used to pick the threshold (default: the input cohort)");
    cmd->add_option("--target-sensitivity", o.target_sensitivity, "Calibration sensitivity target")
        ->capture_default_str();
    cmd->add_option("--iou", o.iou, "NMS IOU threshold")->capture_default_str();
    cmd->add_option("--scorer", o.scorer, "'reference' or a scorer JSON file")->capture_default_str();
    cmd->callback([cmd, &o] {
        if (!o.config.empty()) apply_flag_file(*cmd, o.config);
    });
}

double calibrate(const fs::path& cohort_dir, const dbt::Scorer& scorer, double target) {
    const auto index = dbt::read_cohort_index(cohort_dir);
    std::vector<dbt::ValidationCase> validation(index.size());
    dbt::parallel_for(index.size(), [&](std::size_t i) {
        validation[i] = {dbt::volume_max_box_score(dbt::read_volume(index[i].volume_dir), scorer), index[i].truth.label};
    });
    return dbt::choose_score_threshold(validation, target);
}

void run_condense(const CondenseOptions& o) {
    require(!o.out.empty(), "condense run: --out is required");
    require(o.volume.empty() != o.cohort.empty(), "condense run: give exactly one of --volume or --cohort");
    require_unit(o.iou, "--iou");
    require_unit(o.target_sensitivity, "--target-sensitivity");
    const bool fixed = o.threshold_opt->count() > 0;
    if (fixed) require_unit(o.threshold, "--threshold");
    require(fixed || !o.calibration.empty() || !o.cohort.empty(),
            "condense run: a single volume needs --threshold or --calibration");

    const dbt::ScorerHandle scorer = dbt::load_scorer(o.scorer);
    double threshold = o.threshold;
    std::string calibrated_on;
    if (!fixed) {
        calibrated_on = o.calibration.empty() ? o.cohort : o.calibration;
        threshold = calibrate(calibrated_on, *scorer, o.target_sensitivity);
    }
    const dbt::CondenseParams params{threshold, o.iou};

    json config = {{"scorer", o.scorer},
                   {"scorer_spec", scorer->to_json()},
                   {"iou_threshold", o.iou},
                   {"score_threshold", threshold},
                   {"target_sensitivity", o.target_sensitivity}};
    if (!calibrated_on.empty()) config["calibration"] = calibrated_on;

    ensure_dir(o.out);
    std::vector<std::string> warnings;
    if (!o.volume.empty()) {
        config["volume"] = o.volume;
        const auto opt = dbt::condense(dbt::read_volume(o.volume), *scorer, params);
        dbt::write_optimized(o.out, opt);
        warnings = opt.warnings;
    } else {
        config["cohort"] = o.cohort;
        const auto index = dbt::read_cohort_index(o.cohort);
        const dbt::PreprocessConfig prep{0, true, 0.0};
        const std::vector<dbt::ScorerHandle> scorers{scorer};
        std::vector<std::vector<std::string>> case_warnings(index.size());
        std::vector<double> scores(index.size());
        dbt::parallel_for(index.size(), [&](std::size_t i) {
            const auto opt = dbt::condense(dbt::read_volume(index[i].volume_dir), *scorer, params);
            dbt::write_optimized(fs::path(o.out) / index[i].truth.case_id, opt);
            scores[i] = dbt::ensemble_image_score(scorers, dbt::preprocess(opt.image, prep));
            for (const auto& w : opt.warnings) case_warnings[i].push_back(index[i].truth.case_id + ": " + w);
        });

        std::vector<dbt::StudyEntry> studies;
        std::vector<dbt::CaseRecord> records;
        for (std::size_t i = 0; i < index.size(); ++i) {
            const auto& t = index[i].truth;
            dbt::StudyEntry e;
            e.case_id = t.case_id;
            e.label = t.label;
            if (t.label) e.tumor_size_mm = t.largest_malignant_size_mm();
            e.views.push_back({fs::path(o.out) / t.case_id / "optimized.pgm", dbt::Breast::Left, "OPT"});
            studies.push_back(e);
            records.push_back({t.case_id, t.label, scores[i], e.tumor_size_mm, {}});
            warnings.insert(warnings.end(), case_warnings[i].begin(), case_warnings[i].end());
        }
        dbt::write_study_manifest(fs::path(o.out) / "study.json", studies);
        dbt::write_cases_csv(fs::path(o.out) / "cases.csv", records);
    }
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    config["warnings"] = warnings.size();
    dbt::write_manifest(o.out, "condense run", config, 0);
    std::cerr << "score threshold " << dbt::format_double(threshold) << "\n";
}

// ---- score study -------------------------------------------------------------

struct ScoreOptions {
    std::string config;
    std::string manifest;
    std::string out;
    std::vector<std::string> scorers{"reference"};
    dbt::PreprocessConfig prep;
    bool no_crop = false;
};

void setup_score_study(CLI::App& parent, ScoreOptions& o) {
    auto* cmd = parent.add_subcommand("study", "Score studies listed in a manifest");
    add_flag_file(*cmd, o.config);
    cmd->add_option("--manifest", o.manifest, "Study manifest JSON");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--scorer", o.scorers, "'reference' or scorer JSON files; repeat to ensemble")
        ->capture_default_str();
    cmd->add_option("--target-height", o.prep.target_height, "Resize height before scoring (0 keeps native)")
        ->capture_default_str();
    cmd->add_flag("--no-crop", o.no_crop, "Skip background cropping");
    cmd->add_option("--background-threshold", o.prep.background_threshold, "Background cut for cropping")
        ->capture_default_str();
    cmd->callback([cmd, &o] {
        if (!o.config.empty()) apply_flag_file(*cmd, o.config);
    });
}

void run_score_study(ScoreOptions o) {
    require(!o.manifest.empty(), "score study: --manifest is required");
    require(!o.out.empty(), "score study: --out is required");
    require(!o.scorers.empty(), "score study: at least one --scorer");
    o.prep.crop = !o.no_crop;
    std::vector<dbt::ScorerHandle> scorers;
    json scorer_specs = json::array();
    for (const auto& s : o.scorers) {
        scorers.push_back(dbt::load_scorer(s));
        scorer_specs.push_back(scorers.back()->to_json());
    }
    const auto studies = dbt::read_study_manifest(o.manifest);
    const auto scores = dbt::score_studies(studies, scorers, o.prep);

    ensure_dir(o.out);
    dbt::write_scores_csv(fs::path(o.out) / "scores.csv", scores);
    const bool labelled = std::all_of(scores.begin(), scores.end(), [](const auto& s) { return s.label.has_value(); });
    if (labelled) {
        std::vector<dbt::CaseRecord> records;
        for (const auto& s : scores) records.push_back({s.case_id, *s.label, s.study, s.tumor_size_mm, {}});
        dbt::write_cases_csv(fs::path(o.out) / "cases.csv", records);
    }
    const json config = {{"manifest", o.manifest},
                         {"scorers", o.scorers},
                         {"scorer_specs", scorer_specs},
                         {"target_height", o.prep.target_height},
                         {"crop", o.prep.crop},
                         {"background_threshold", o.prep.background_threshold}};
    dbt::write_manifest(o.out, "score study", config, 0);
}

// ---- train mil -------------------------------------------------------------

struct TrainOptions {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t iterations = 0;
    double learning_rate = 0.0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* iterations_opt = nullptr;
    CLI::Option* lr_opt = nullptr;
};

void setup_train_mil(CLI::App& parent, TrainOptions& o) {
    auto* cmd = parent.add_subcommand("mil", "Train the toy MIL head on labelled study manifests");
    cmd->add_option("--config", o.config, "Training JSON (datasets, hyperparameters)");
    cmd->add_option("--out", o.out, "Output directory (default: alongside the config)");
    o.seed_opt = cmd->add_option("--seed", o.seed, "Override the sampling seed");
    o.iterations_opt = cmd->add_option("--iterations", o.iterations, "Override the iteration count");
    o.lr_opt = cmd->add_option("--learning-rate", o.learning_rate, "Override the learning rate");
}

struct TrainFile {
    double learning_rate = 0.05;
    std::size_t iterations = 2000;
    std::uint64_t seed = 0;
    bool flip_augment = true;
    dbt::PreprocessConfig preprocess{0, true, 0.0};
    dbt::ReferenceDetectorParams candidate_detector = dbt::permissive_candidate_params();
    dbt::ToyScorer initial;
    std::vector<std::pair<std::string, fs::path>> datasets;
};

TrainFile read_train_file(const fs::path& path) {
    const json j = dbt::load_json(path);
    dbt::check_keys(j, {"learning_rate", "iterations", "seed", "flip_augment", "preprocess", "candidate_detector",
                        "initial", "datasets"},
                    "train config");
    TrainFile t;
    dbt::read_field(j, "learning_rate", t.learning_rate);
    dbt::read_field(j, "iterations", t.iterations);
    dbt::read_field(j, "seed", t.seed);
    dbt::read_field(j, "flip_augment", t.flip_augment);
    dbt::read_field(j, "candidate_detector", t.candidate_detector);
    dbt::read_field(j, "initial", t.initial);
    if (const auto it = j.find("preprocess"); it != j.end()) {
        dbt::check_keys(*it, {"target_height", "crop", "background_threshold"}, "preprocess");
        dbt::read_field(*it, "target_height", t.preprocess.target_height);
        dbt::read_field(*it, "crop", t.preprocess.crop);
        dbt::read_field(*it, "background_threshold", t.preprocess.background_threshold);
    }
    require(j.contains("datasets") && j.at("datasets").is_array() && !j.at("datasets").empty(),
            path.string() + ": 'datasets' must be a non-empty array");
    for (const auto& d : j.at("datasets")) {
        dbt::check_keys(d, {"name", "manifest"}, "dataset");
        fs::path m = d.at("manifest").get<std::string>();
        if (m.is_relative()) m = path.parent_path() / m;
        t.datasets.emplace_back(d.value("name", m.stem().string()), m);
    }
    return t;
}

void run_train_mil(const TrainOptions& o) {
    require(!o.config.empty(), "train mil: --config is required");
    TrainFile t = read_train_file(o.config);
    if (o.seed_opt->count()) t.seed = o.seed;
    if (o.iterations_opt->count()) t.iterations = o.iterations;
    if (o.lr_opt->count()) t.learning_rate = o.learning_rate;
    require(t.learning_rate >= 0.0 && std::isfinite(t.learning_rate), "train mil: learning_rate must be >= 0");
    const fs::path out = o.out.empty() ? fs::path(o.config).parent_path() : fs::path(o.out);

    dbt::TrainConfig tc;
    tc.learning_rate = t.learning_rate;
    tc.iterations = t.iterations;
    tc.seed = t.seed;
    tc.initial = t.initial;
    json dataset_info = json::array();
    for (const auto& [name, manifest] : t.datasets) {
        const auto studies = dbt::read_study_manifest(manifest);
        std::vector<dbt::ImageGrid> images;
        std::vector<bool> labels;
        for (const auto& s : studies) {
            require(s.label.has_value(), manifest.string() + ": study " + s.case_id + " has no label");
            for (const auto& v : s.views) {
                images.push_back(dbt::preprocess(dbt::read_pgm(v.image), t.preprocess));
                labels.push_back(*s.label);
            }
        }
        tc.datasets.push_back({name, dbt::make_training_cases(images, labels, t.candidate_detector, t.flip_augment)});
        dataset_info.push_back({{"name", name}, {"manifest", manifest.string()}, {"images", images.size()}});
    }

    const dbt::TrainResult result = dbt::train(tc);
    json scorer = dbt::ToyMilScorer(result.scorer, t.candidate_detector).to_json();
    scorer["trajectory"] = result.loss_trajectory;
    ensure_dir(out);
    dbt::save_json(out / "toy_scorer.json", scorer);

    const json config = {{"config", o.config},
                         {"learning_rate", t.learning_rate},
                         {"iterations", t.iterations},
                         {"flip_augment", t.flip_augment},
                         {"candidate_detector", t.candidate_detector},
                         {"initial", t.initial},
                         {"datasets", dataset_info}};
    dbt::write_manifest(out, "train mil", config, t.seed);
}

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
    std::string config;
    std::string cases;
    std::string cases_b;
    std::string out;
    std::size_t resamples = dbt::kDefaultResamples;
    std::size_t populations = dbt::kDefaultPopulations;
    std::uint64_t seed = 0;
    double confidence = 0.95;
    std::size_t min_panel = 1;
    std::size_t max_panel = 0;
    std::vector<double> target;
    std::vector<double> edges = dbt::default_size_edges();
};

CLI::App* add_eval_command(CLI::App& parent, const std::string& name, const std::string& help, EvalOptions& o) {
    auto* cmd = parent.add_subcommand(name, help);
    add_flag_file(*cmd, o.config);
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Resampling seed")->capture_default_str();
    return cmd;
}

void finish_eval_setup(CLI::App* cmd, EvalOptions& o) {
    cmd->callback([cmd, &o] {
        if (!o.config.empty()) apply_flag_file(*cmd, o.config);
    });
}

void setup_eval(CLI::App& parent, EvalOptions& o) {
    auto* roc = add_eval_command(parent, "roc", "ROC curve and AUC with a bootstrap CI", o);
    roc->add_option("--cases", o.cases, "cases.csv");
    roc->add_option("--resamples", o.resamples, "Bootstrap resamples")->capture_default_str();
    roc->add_option("--confidence", o.confidence, "CI level")->capture_default_str();
    finish_eval_setup(roc, o);

    auto* delong = add_eval_command(parent, "delong", "Paired AUC comparison of two score sets", o);
    delong->add_option("--cases-a", o.cases, "cases.csv of model A");
    delong->add_option("--cases-b", o.cases_b, "cases.csv of model B (same case ids)");
    finish_eval_setup(delong, o);

    auto* readers = add_eval_command(parent, "readers", "Reader operating points, panels and matched comparisons", o);
    readers->add_option("--cases", o.cases, "cases.csv with birads_<reader> columns");
    readers->add_option("--resamples", o.resamples, "Bootstrap resamples")->capture_default_str();
    readers->add_option("--confidence", o.confidence, "CI level")->capture_default_str();
    readers->add_option("--min-panel", o.min_panel, "Smallest panel size")->capture_default_str();
    readers->add_option("--max-panel", o.max_panel, "Largest panel size (0: all readers)")->capture_default_str();
    finish_eval_setup(readers, o);

    auto* sized = add_eval_command(parent, "size-matched", "AUC over populations matched to a tumor-size histogram", o);
    sized->add_option("--cases", o.cases, "cases.csv with tumor_size_mm");
    sized->add_option("--target", o.target, "Target share per size bin")->delimiter(',');
    sized->add_option("--edges", o.edges, "Ascending bin edges in mm")->delimiter(',')->capture_default_str();
    sized->add_option("--populations", o.populations, "Resampled populations")->capture_default_str();
    finish_eval_setup(sized, o);
}

dbt::BootstrapOptions bootstrap_options(const EvalOptions& o) {
    require(o.resamples >= 1, "--resamples must be >= 1");
    require(o.confidence > 0.0 && o.confidence < 1.0, "--confidence must lie in (0, 1)");
    dbt::BootstrapOptions b;
    b.n_resamples = o.resamples;
    b.seed = o.seed;
    b.confidence = o.confidence;
    return b;
}

void run_eval_roc(const EvalOptions& o) {
    require(!o.cases.empty() && !o.out.empty(), "eval roc: --cases and --out are required");
    const auto bo = bootstrap_options(o);
    const auto cases = dbt::read_cases_csv(o.cases);
    const auto roc = dbt::roc_and_auc(cases);
    ensure_dir(o.out);
    dbt::write_roc_csv(fs::path(o.out) / "roc.csv", roc);
    dbt::write_roc_svg(fs::path(o.out) / "roc.svg", roc);
    dbt::save_json(fs::path(o.out) / "summary.json", {{"roc", dbt::auc_summary(cases, bo)}});
    dbt::write_manifest(o.out, "eval roc",
                        {{"cases", o.cases}, {"n_resamples", o.resamples}, {"confidence", o.confidence}}, o.seed);
}

void run_eval_delong(const EvalOptions& o) {
    require(!o.cases.empty() && !o.cases_b.empty() && !o.out.empty(),
            "eval delong: --cases-a, --cases-b and --out are required");
    const auto a = dbt::read_cases_csv(o.cases);
    const auto b = dbt::read_cases_csv(o.cases_b);
    std::map<std::string, const dbt::CaseRecord*> by_id;
    for (const auto& c : b) {
        require(by_id.emplace(c.case_id, &c).second, o.cases_b + ": duplicate case id " + c.case_id);
    }
    require(a.size() == b.size(), "eval delong: the two files list different cases");
    std::vector<double> sa, sb;
    std::vector<bool> labels;
    for (const auto& c : a) {
        const auto it = by_id.find(c.case_id);
        require(it != by_id.end(), "eval delong: case " + c.case_id + " missing from " + o.cases_b);
        require(it->second->label == c.label, "eval delong: labels disagree for case " + c.case_id);
        sa.push_back(c.score);
        sb.push_back(it->second->score);
        labels.push_back(c.label);
    }
    const auto r = dbt::delong_test(sa, sb, labels);
    ensure_dir(o.out);
    dbt::save_json(fs::path(o.out) / "summary.json", {{"delong", dbt::delong_summary(r)}});
    dbt::write_manifest(o.out, "eval delong", {{"cases_a", o.cases}, {"cases_b", o.cases_b}}, 0);
}

std::string panel_name(const std::vector<std::string>& readers) {
    std::string s;
    for (const auto& r : readers) s += (s.empty() ? "" : "+") + r;
    return s;
}

json comparison_json(const dbt::PairedComparison& c) {
    return {{"model", c.model_value}, {"reader_mean", c.reader_value}, {"delta", c.delta}, {"ci_lo", c.ci_lo},
            {"ci_hi", c.ci_hi},       {"p_value", c.p_value},          {"redraws", c.redraws}};
}

void run_eval_readers(const EvalOptions& o) {
    require(!o.cases.empty() && !o.out.empty(), "eval readers: --cases and --out are required");
    const auto bo = bootstrap_options(o);
    const auto cases = dbt::read_cases_csv(o.cases);
    const auto readers = dbt::reader_ids(cases);
    require(!readers.empty(), "eval readers: " + o.cases + " has no birads_<reader> columns");
    const auto roc = dbt::roc_and_auc(cases);

    json reader_points = json::object();
    double mean_sens = 0.0, mean_spec = 0.0;
    for (const auto& r : readers) {
        const auto p = dbt::reader_operating_point(cases, r);
        reader_points[r] = {{"sensitivity", p.sensitivity}, {"specificity", p.specificity}};
        mean_sens += p.sensitivity;
        mean_spec += p.specificity;
    }
    mean_sens /= static_cast<double>(readers.size());
    mean_spec /= static_cast<double>(readers.size());

    const auto panels = dbt::enumerate_panels(cases, readers, o.min_panel, o.max_panel);
    std::string csv = "panel,size,sensitivity,specificity\n";
    for (const auto& p : panels) {
        csv += panel_name(p.readers) + "," + std::to_string(p.readers.size()) + "," +
               dbt::format_double(p.point.sensitivity) + "," + dbt::format_double(p.point.specificity) + "\n";
    }

    const auto sens = dbt::paired_delta_pvalue(cases, readers, dbt::MatchedMetric::Sensitivity, bo);
    const auto spec = dbt::paired_delta_pvalue(cases, readers, dbt::MatchedMetric::Specificity, bo);

    ensure_dir(o.out);
    write_text(fs::path(o.out) / "panels.csv", csv);
    dbt::write_roc_csv(fs::path(o.out) / "roc.csv", roc);
    dbt::write_roc_svg(fs::path(o.out) / "roc.svg", roc, panels);
    const json summary = {
        {"roc", dbt::auc_summary(cases, bo)},
        {"readers", reader_points},
        {"mean_reader", {{"sensitivity", mean_sens}, {"specificity", mean_spec}}},
        {"matched", {{"sensitivity_at_mean_reader_specificity", comparison_json(sens)},
                     {"specificity_at_mean_reader_sensitivity", comparison_json(spec)}}},
        {"n_panels", panels.size()}};
    dbt::save_json(fs::path(o.out) / "summary.json", summary);
    dbt::write_manifest(o.out, "eval readers",
                        {{"cases", o.cases},
                         {"n_resamples", o.resamples},
                         {"confidence", o.confidence},
                         {"min_panel", o.min_panel},
                         {"max_panel", o.max_panel}},
                        o.seed);
}

void run_eval_size_matched(const EvalOptions& o) {
    require(!o.cases.empty() && !o.out.empty(), "eval size-matched: --cases and --out are required");
    require(!o.target.empty(), "eval size-matched: --target shares are required");
    require(o.populations >= 1, "--populations must be >= 1");
    const dbt::SizeHistogram target{o.edges, o.target};
    target.validate();
    const auto cases = dbt::read_cases_csv(o.cases);
    const auto r = dbt::size_matched_auc(cases, target, o.populations, o.seed);
    ensure_dir(o.out);
    dbt::save_json(fs::path(o.out) / "summary.json",
                   {{"size_matched",
                     {{"mean_auc", r.mean_auc},
                      {"sd_auc", r.sd_auc},
                      {"n_populations", r.n_populations},
                      {"mean_tv_distance", r.mean_tv_distance},
                      {"edges", o.edges},
                      {"source_shares", r.source_shares},
                      {"target_shares", r.target_shares}}}});
    dbt::write_manifest(o.out, "eval size-matched",
                        {{"cases", o.cases}, {"edges", o.edges}, {"target", o.target}, {"n_populations", o.populations}},
                        o.seed);
}

// ---- report ------------------------------------------------------------------

struct ReportOptions {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t resamples = 0;
    std::size_t populations = 0;
    double iou = 0.0;
    double target_sensitivity = 0.0;
    std::vector<CLI::Option*> given;
    CLI::Option* out_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* resamples_opt = nullptr;
    CLI::Option* populations_opt = nullptr;
    CLI::Option* iou_opt = nullptr;
    CLI::Option* sens_opt = nullptr;
};

void setup_report(CLI::App& app, ReportOptions& o) {
    auto* cmd = app.add_subcommand("report", "Run the full phantom study and write a report bundle");
    cmd->add_option("--config", o.config, "Run configuration JSON");
    o.out_opt = cmd->add_option("--out", o.out, "Override output_dir");
    o.seed_opt = cmd->add_option("--seed", o.seed, "Override the master seed");
    o.resamples_opt = cmd->add_option("--resamples", o.resamples, "Override stats.n_resamples");
    o.populations_opt = cmd->add_option("--populations", o.populations, "Override stats.n_populations");
    o.iou_opt = cmd->add_option("--iou", o.iou, "Override condense.iou_threshold");
    o.sens_opt = cmd->add_option("--target-sensitivity", o.target_sensitivity, "Override condense.target_sensitivity");
}

void run_report(const ReportOptions& o) {
    dbt::RunConfig cfg;
    if (!o.config.empty()) cfg = dbt::load_json(o.config).get<dbt::RunConfig>();
    if (o.out_opt->count()) cfg.output_dir = o.out;
    if (o.seed_opt->count()) cfg.seed = o.seed;
    if (o.resamples_opt->count()) cfg.n_resamples = o.resamples;
    if (o.populations_opt->count()) cfg.n_populations = o.populations;
    if (o.iou_opt->count()) cfg.iou_threshold = o.iou;
    if (o.sens_opt->count()) cfg.target_sensitivity = o.target_sensitivity;
    dbt::validate(cfg);
    const json summary = dbt::run_pipeline(cfg);
    for (const auto& [name, p] : summary.at("pathways").items()) {
        std::cerr << name << ": AUC " << dbt::format_double(p.at("auc").get<double>()) << "\n";
    }
}

int run(int argc, char** argv) {
    CLI::App app{"DBT condensation, MIL scoring and reader-study statistics on synthetic phantoms", "dbt"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: all cores); outputs do not depend on it")
        ->capture_default_str();

    auto* phantom = app.add_subcommand("phantom", "Synthetic phantom volumes");
    phantom->require_subcommand(1);
    PhantomGenOptions phantom_gen;
    setup_phantom_gen(*phantom, phantom_gen);

    auto* condense = app.add_subcommand("condense", "Optimized-image condensation");
    condense->require_subcommand(1);
    CondenseOptions condense_opts;
    setup_condense_run(*condense, condense_opts);

    auto* score = app.add_subcommand("score", "Study scoring");
    score->require_subcommand(1);
    ScoreOptions score_opts;
    setup_score_study(*score, score_opts);

    auto* train = app.add_subcommand("train", "Toy MIL training");
    train->require_subcommand(1);
    TrainOptions train_opts;
    setup_train_mil(*train, train_opts);

    auto* eval = app.add_subcommand("eval", "Evaluation statistics");
    eval->require_subcommand(1);
    EvalOptions eval_opts;
    setup_eval(*eval, eval_opts);

    ReportOptions report_opts;
    setup_report(app, report_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    dbt::set_max_threads(threads);
    auto chosen = [](CLI::App* group, const char* name) { return group->got_subcommand(name); };
    if (chosen(phantom, "gen")) run_phantom_gen(phantom_gen);
    else if (chosen(condense, "run")) run_condense(condense_opts);
    else if (chosen(score, "study")) run_score_study(score_opts);
    else if (chosen(train, "mil")) run_train_mil(train_opts);
    else if (chosen(eval, "roc")) run_eval_roc(eval_opts);
    else if (chosen(eval, "delong")) run_eval_delong(eval_opts);
    else if (chosen(eval, "readers")) run_eval_readers(eval_opts);
    else if (chosen(eval, "size-matched")) run_eval_size_matched(eval_opts);
    else if (app.got_subcommand("report")) run_report(report_opts);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dbt::NumericError& e) {
        std::cerr << "dbt: numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const dbt::IoError& e) {
        std::cerr << "dbt: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "dbt: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "dbt: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const json::exception& e) {
        std::cerr << "dbt: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "dbt: error: " << e.what() << "\n";
        return kExitOther;
    }
}
