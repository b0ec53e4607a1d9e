// Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed
// here; a failing criterion fails the process.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "dbt/common.hpp"
#include "dbt/condense.hpp"
#include "dbt/json_util.hpp"
#include "dbt/mil.hpp"
#include "dbt/phantom.hpp"
#include "dbt/pipeline.hpp"
#include "dbt/stats.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace dbt;

namespace {

// ---- pinned tolerances -------------------------------------------------------

constexpr double kNmsSeconds = 5.0;
constexpr double kAucTol = 1e-12;
constexpr double kDeLongVarTol = 1e-10;
constexpr double kKsLevel = 0.01;
constexpr double kCoverageTarget = 0.95;
constexpr double kCoverageSlack = 0.02;
constexpr double kBootstrapSeconds = 120.0;
constexpr double kGradRelTol = 1e-5;
constexpr double kFdStep = 1e-5;
constexpr double kTieGap = 1e-3;
constexpr double kCondenseMargin = 0.05;
constexpr double kCondenseSeconds = 300.0;
constexpr double kSizeMatchedAucTol = 0.005;
constexpr double kSizeMatchedTv = 0.05;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

// ---- 1. NMS oracle -----------------------------------------------------------

Outcome nms_oracle() {
    const auto t0 = Clock::now();
    std::size_t mismatches = 0, runs = 0;
    for (int set = 0; set < 1000; ++set) {
        Rng rng(derive_seed(101, set));
        const auto boxes = oracle::random_boxes(rng, rng.below(51), set % 3 == 0);
        for (double thr : {0.1, 0.2, 0.5}) {
            ++runs;
            mismatches += nms_indices(boxes, thr) != oracle::nms(boxes, thr);
        }
    }
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << runs << " runs, " << mismatches << " mismatches, " << secs << " s";
    return {mismatches == 0 && secs < kNmsSeconds, d.str()};
}

// ---- 2. AUC oracle -----------------------------------------------------------

Outcome auc_oracle() {
    double worst = 0.0;
    for (int set = 0; set < 100; ++set) {
        Rng rng(derive_seed(102, set));
        const std::size_t n = 2 + rng.below(199);
        std::vector<double> s;
        std::vector<bool> y;
        for (std::size_t i = 0; i < n; ++i) {
            y.push_back(i < 2 ? i == 0 : rng.uniform() < 0.5);
            // coarse grid for heavy ties
            s.push_back(static_cast<double>(rng.below(set % 2 ? 8 : 1000)) / 1000.0);
        }
        worst = std::max(worst, std::abs(roc_from_scores(s, y).auc - oracle::pairwise_auc(s, y)));
    }
    std::ostringstream d;
    d << "max |auc - pairwise| = " << worst;
    return {worst <= kAucTol, d.str()};
}

// ---- 3. DeLong ---------------------------------------------------------------

Outcome delong_checks() {
    Rng rng(103);
    std::vector<double> s;
    std::vector<bool> y;
    for (int i = 0; i < 30; ++i) {
        s.push_back(rng.uniform());
        y.push_back(i % 3 == 0);
    }
    const auto same = delong_test(s, s, y);
    const bool identical_ok = same.p == 1.0;

    double worst = 0.0;
    for (int set = 0; set < 50; ++set) {
        Rng r(derive_seed(104, set));
        const std::size_t n = 4 + r.below(7);
        std::vector<double> a, b;
        std::vector<bool> lab(n, false);
        lab[0] = lab[1] = true;
        for (std::size_t i = 4; i < n; ++i) lab[i] = r.uniform() < 0.5;
        for (std::size_t i = 0; i < n; ++i) {
            a.push_back(static_cast<double>(r.below(4)));
            b.push_back(r.uniform());
        }
        const auto got = delong_test(a, b, lab);
        const auto want = oracle::delong_variance(a, b, lab);
        worst = std::max({worst, std::abs(got.var_a - want.var_a), std::abs(got.var_b - want.var_b),
                          std::abs(got.cov_ab - want.cov), std::abs(got.var_diff - want.var_diff)});
    }

    std::vector<double> ps;
    for (int set = 0; set < 1000; ++set) {
        Rng r(derive_seed(105, set));
        std::vector<double> a, b;
        std::vector<bool> lab;
        for (int i = 0; i < 100; ++i) {
            lab.push_back(i < 50);
            a.push_back(r.normal());
            b.push_back(r.normal());
        }
        ps.push_back(delong_test(a, b, lab).p);
    }
    const double ks_p = oracle::ks_uniform_pvalue(ps);

    std::ostringstream d;
    d << "identical p=" << same.p << ", max var err " << worst << ", null KS p=" << ks_p;
    return {identical_ok && worst <= kDeLongVarTol && ks_p > kKsLevel, d.str()};
}

// ---- 4. bootstrap coverage ---------------------------------------------------

Outcome bootstrap_coverage() {
    const auto t0 = Clock::now();
    constexpr int kDatasets = 500;
    constexpr std::size_t kN = 200;
    int covered = 0;
    for (int set = 0; set < kDatasets; ++set) {
        Rng rng(derive_seed(106, set));
        std::vector<double> x(kN);
        for (auto& v : x) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        BootstrapOptions o;
        o.n_resamples = kDefaultResamples;
        o.seed = derive_seed(107, set);
        const auto r = bootstrap_ci(x.size(), [&](std::span<const std::size_t> idx) {
            double t = 0;
            for (auto i : idx) t += x[i];
            return std::optional<double>(t / static_cast<double>(idx.size()));
        }, o);
        covered += r.lo <= 0.5 && 0.5 <= r.hi;
    }
    const double rate = static_cast<double>(covered) / kDatasets;
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "coverage " << rate << " over " << kDatasets << " datasets, " << secs << " s";
    return {std::abs(rate - kCoverageTarget) <= kCoverageSlack && secs < kBootstrapSeconds, d.str()};
}

// ---- 5. MIL gradient ---------------------------------------------------------

Outcome gradient_check() {
    Rng rng(108);
    int points = 0, skipped = 0;
    double worst = 0.0;
    while (points < 100) {
        ToyScorer theta;
        for (auto& w : theta.weights) w = rng.normal();
        theta.bias = rng.normal();
        std::vector<FeatureVector> cands(2 + rng.below(10));
        for (auto& f : cands)
            for (auto& v : f) v = 2.0 * rng.normal();
        std::vector<double> z;
        for (const auto& f : cands) z.push_back(theta.logit(f));
        std::sort(z.begin(), z.end());
        if (z[z.size() - 1] - z[z.size() - 2] < kTieGap) {
            ++skipped;
            continue;
        }
        const bool label = rng.uniform() < 0.5;
        const auto g = mil_loss_grad(theta, cands, label);
        const auto p = theta.parameters();
        double num2 = 0, diff2 = 0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            auto up = p, dn = p;
            up[k] += kFdStep;
            dn[k] -= kFdStep;
            const double fd = (mil_loss_grad(ToyScorer::from_parameters(up), cands, label).loss -
                               mil_loss_grad(ToyScorer::from_parameters(dn), cands, label).loss) / (2 * kFdStep);
            num2 += fd * fd;
            diff2 += (fd - g.grad[k]) * (fd - g.grad[k]);
        }
        worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12));
        ++points;
    }
    std::ostringstream d;
    d << points << " points (" << skipped << " tie points skipped), max rel err " << worst;
    return {worst < kGradRelTol, d.str()};
}

// ---- 6. condensation directional reproduction --------------------------------

Outcome condensation_direction() {
    const auto t0 = Clock::now();
    bool all = true;
    std::ostringstream d;
    for (std::uint64_t seed : {1, 2, 3}) {
        RunConfig run;
        run.seed = seed;
        run.cohort.n_cancer = 100;
        run.cohort.n_negative = 100;
        const auto study = run_condensation_study(study_config(run));
        std::vector<double> opt, cen, proj, smax;
        std::vector<bool> y;
        for (const auto& c : study.cases) {
            opt.push_back(c.optimized);
            cen.push_back(c.center);
            proj.push_back(c.projection);
            smax.push_back(c.slice_max);
            y.push_back(c.label);
        }
        const double a_opt = roc_from_scores(opt, y).auc, a_cen = roc_from_scores(cen, y).auc;
        const double a_proj = roc_from_scores(proj, y).auc, a_smax = roc_from_scores(smax, y).auc;
        const bool ok = a_opt - a_cen >= kCondenseMargin && a_opt - a_proj >= kCondenseMargin && a_smax < a_opt;
        all = all && ok;
        d << "seed " << seed << ": opt " << a_opt << " center " << a_cen << " proj " << a_proj << " slice-max " << a_smax
          << (ok ? "" : " (violated)") << "; ";
    }
    const double secs = seconds_since(t0);
    d << secs << " s";
    return {all && secs < kCondenseSeconds, d.str()};
}

// ---- 7. condensation correctness ---------------------------------------------

Outcome condensation_correctness() {
    PhantomConfig cfg;
    cfg.clutter_density = 0;
    cfg.noise_sigma = 0;
    cfg.texture_amplitude = 0;
    const ReferenceDetector det;
    int hits = 0;
    std::size_t foreign_pixels = 0;
    for (int i = 0; i < 100; ++i) {
        Rng rng(derive_seed(109, i));
        LesionSpec l;
        l.radius = 3.5 + rng.uniform();
        l.center_x = 8 + rng.uniform() * 48;
        l.center_y = 8 + rng.uniform() * 48;
        l.slice_extent = 3 + 2 * rng.below(2);
        l.center_slice = 3 + rng.below(14);
        l.contrast = 60 + 240 * rng.uniform();
        const auto p = generate_volume(cfg, {l});
        const auto opt = condense(p.volume, det, {0.0, kDefaultIouThreshold});
        bool ok = true;
        for (std::size_t y = 0; y < opt.image.height(); ++y)
            for (std::size_t x = 0; x < opt.image.width(); ++x) {
                if (std::hypot(x + 0.5 - l.center_x, y + 0.5 - l.center_y) <= l.radius)
                    ok = ok && opt.provenance_at(x, y) == l.center_slice;
                foreign_pixels += opt.image(x, y) != p.volume.slice(opt.provenance_at(x, y))(x, y);
            }
        hits += ok;
    }
    // the no-fabrication invariant also on cluttered, noisy volumes
    CohortConfig cc;
    cc.n_cancer = 10;
    cc.n_negative = 10;
    cc.seed = 110;
    for (const auto& p : generate_cohort(cc)) {
        const auto opt = condense(p.volume, det, {0.0, kDefaultIouThreshold});
        for (std::size_t y = 0; y < opt.image.height(); ++y)
            for (std::size_t x = 0; x < opt.image.width(); ++x)
                foreign_pixels += opt.image(x, y) != p.volume.slice(opt.provenance_at(x, y))(x, y);
    }
    std::ostringstream d;
    d << hits << "/100 lesion footprints from the best slice, " << foreign_pixels << " fabricated pixels";
    return {hits == 100 && foreign_pixels == 0, d.str()};
}

// ---- CLI helpers -------------------------------------------------------------

int run_cli(const fs::path& cwd, const std::string& args) {
    const std::string cmd = "cd '" + cwd.string() + "' && " + DBT_CLI_PATH + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<CaseRecord> five_reader_table(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CaseRecord> cases;
    for (std::size_t i = 0; i < n; ++i) {
        CaseRecord c{"case" + std::to_string(i), i < n / 3, 0, {}, {}};
        c.score = std::min(1.0, rng.uniform() * 0.8 + (c.label ? 0.2 : 0.0));
        if (c.label) c.tumor_size_mm = 3 + rng.uniform() * 40;
        for (int r = 1; r <= 5; ++r) {
            const double p = c.label ? 0.7 : 0.25;
            c.reader_birads["r" + std::to_string(r)] = rng.uniform() < p ? 3 + static_cast<int>(rng.below(3))
                                                                         : 1 + static_cast<int>(rng.below(2));
        }
        cases.push_back(c);
    }
    return cases;
}

// ---- 8. reader panels ----------------------------------------------------------

Outcome reader_panels() {
    TempDir dir("accept_readers");
    write_cases_csv(dir.path / "cases.csv", five_reader_table(60, 111));
    const int rc = run_cli(dir.path, "eval readers --cases cases.csv --resamples 500 --out out");
    std::size_t rows = 0, singles = 0;
    if (rc == 0) {
        std::istringstream in(slurp(dir.path / "out" / "panels.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            ++rows;
            singles += line.find('+') == std::string::npos;
        }
    }

    auto cases = five_reader_table(60, 112);
    for (auto& c : cases)
        for (int r = 2; r <= 5; ++r) c.reader_birads["r" + std::to_string(r)] = c.reader_birads["r1"];
    const std::vector<std::string> ids{"r1", "r2", "r3", "r4", "r5"};
    const auto single = reader_operating_point(cases, "r1");
    bool identical = true;
    for (const auto& p : enumerate_panels(cases, ids)) identical = identical && p.point == single;

    std::ostringstream d;
    d << "exit " << rc << ", " << rows << " panel rows (" << singles << " singles), identical panels "
      << (identical ? "match" : "differ");
    return {rc == 0 && rows == 31 && singles == 5 && identical, d.str()};
}

// ---- 9. size-matched resampling ----------------------------------------------

Outcome size_matched() {
    Rng rng(113);
    std::vector<CaseRecord> cases;
    for (int i = 0; i < 800; ++i) {
        CaseRecord c{"c" + std::to_string(i), i < 400, 0, {}, {}};
        if (c.label) {
            c.tumor_size_mm = 2 + rng.uniform() * 70;
            c.score = std::min(1.0, 0.25 + *c.tumor_size_mm / 120 + 0.4 * rng.uniform());
        } else {
            c.score = 0.7 * rng.uniform();
        }
        cases.push_back(c);
    }
    const SizeHistogram bins{default_size_edges(), {1, 1, 1, 1}};
    const SizeHistogram target{default_size_edges(), source_size_shares(cases, bins)};
    const auto r = size_matched_auc(cases, target, kDefaultPopulations, 114);
    BootstrapOptions o;
    o.n_resamples = kDefaultPopulations;
    o.seed = 115;
    const auto plain = bootstrap_auc(cases, o);
    const double gap = std::abs(r.mean_auc - plain.mean);
    std::ostringstream d;
    d << "size-matched mean " << r.mean_auc << " vs bootstrap mean " << plain.mean << " (gap " << gap
      << "), mean TV " << r.mean_tv_distance;
    return {gap <= kSizeMatchedAucTol && r.mean_tv_distance < kSizeMatchedTv, d.str()};
}

// ---- 10. determinism -----------------------------------------------------------

bool run_full_pipeline(const fs::path& dir, int threads) {
    const std::string t = "--threads " + std::to_string(threads) + " ";
    write_cases_csv(dir / "readers.csv", five_reader_table(40, 116));
    save_json(dir / "train.json", {{"learning_rate", 0.05},
                                   {"iterations", 300},
                                   {"seed", 4},
                                   {"preprocess", {{"target_height", 0}}},
                                   {"datasets", {{{"name", "opt"}, {"manifest", "cond/study.json"}}}}});
    save_json(dir / "run.json", {{"output_dir", "report"},
                                 {"seed", 9},
                                 {"cohort", {{"n_cancer", 12}, {"n_negative", 12}}},
                                 {"training", {{"n_cancer", 12}, {"n_negative", 12}, {"iterations", 300}}},
                                 {"stats", {{"n_resamples", 300}, {"n_populations", 200}}}});
    const std::vector<std::string> steps{
        "phantom gen --out coh --n-cancer 10 --n-negative 10 --seed 3",
        "condense run --cohort coh --out cond",
        "score study --manifest cond/study.json --target-height 0 --out scored",
        "train mil --config train.json --out trained",
        "score study --manifest cond/study.json --target-height 0 --scorer trained/toy_scorer.json --scorer reference "
        "--out scored_toy",
        "eval roc --cases scored_toy/cases.csv --resamples 300 --seed 2 --out roc",
        "eval delong --cases-a scored_toy/cases.csv --cases-b scored/cases.csv --out delong",
        "eval readers --cases readers.csv --resamples 300 --seed 2 --out readers",
        "eval size-matched --cases readers.csv --target 0.4,0.3,0.3,0 --populations 300 --out sized",
        "report --config run.json"};
    for (const auto& s : steps)
        if (run_cli(dir, t + s) != 0) {
            std::cerr << "step failed: " << s << "\n";
            return false;
        }
    return true;
}

std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

Outcome determinism() {
    TempDir a("accept_det_a"), b("accept_det_b"), c("accept_det_c");
    const bool ran = run_full_pipeline(a.path, 1) && run_full_pipeline(b.path, 1) && run_full_pipeline(c.path, 4);
    if (!ran) return {false, "a pipeline step failed"};
    const auto files = files_under(a.path);
    std::size_t differing = 0;
    std::string first_diff;
    for (const auto* other : {&b, &c}) {
        if (files_under(other->path) != files) return {false, "file sets differ"};
        for (const auto& f : files)
            if (slurp(a.path / f) != slurp(other->path / f)) {
                ++differing;
                if (first_diff.empty()) first_diff = f.string();
            }
    }
    std::ostringstream d;
    d << files.size() << " files compared across 2 reruns (threads 1 and 4), " << differing << " differ";
    if (!first_diff.empty()) d << " (first: " << first_diff << ")";
    return {differing == 0, d.str()};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"NMS oracle equivalence", nms_oracle},
        {"AUC oracle equivalence", auc_oracle},
        {"DeLong correctness", delong_checks},
        {"Bootstrap coverage", bootstrap_coverage},
        {"MIL gradient check", gradient_check},
        {"Condensation directional reproduction", condensation_direction},
        {"Condensation correctness", condensation_correctness},
        {"Reader-panel machinery", reader_panels},
        {"Size-matched resampling", size_matched},
        {"Determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
