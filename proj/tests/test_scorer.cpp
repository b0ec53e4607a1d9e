#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dbt/phantom.hpp"
#include "dbt/scorer.hpp"
#include "test_util.hpp"

using namespace dbt;

namespace {

// Reports a fixed score, independent of the image.
class FixedScorer final : public Scorer {
public:
    explicit FixedScorer(double s) : s_(s) {}
    std::vector<ScoredBox> detect(const ImageGrid&) const override { return {make_box(0, 0, 1, 1, s_)}; }
    nlohmann::json to_json() const override { return {{"type", "fixed"}}; }

private:
    double s_;
};

// Scores depend on orientation: left-heavy images score high.
class SidedScorer final : public Scorer {
public:
    std::vector<ScoredBox> detect(const ImageGrid& img) const override {
        return {make_box(0, 0, 1, 1, img(0, 0) > img(img.width() - 1, 0) ? 0.9 : 0.1)};
    }
    nlohmann::json to_json() const override { return {{"type", "sided"}}; }
};

Phantom quiet_lesion(double x, double y, double contrast) {
    PhantomConfig c;
    c.n_slices = 1;
    c.clutter_density = 0;
    c.noise_sigma = 0;
    c.texture_amplitude = 0;
    LesionSpec l;
    l.center_x = x;
    l.center_y = y;
    l.radius = 4;
    l.contrast = contrast;
    return generate_volume(c, {l});
}

}  // namespace

TEST_SUITE("scorer") {

TEST_CASE("reference detector on trivial inputs") {
    const ReferenceDetector det;
    CHECK(det.detect(ImageGrid(32, 32)).empty());
    CHECK(det.detect(ImageGrid(32, 32, 77.0)).empty());
}

TEST_CASE("reference detector finds a noiseless lesion") {
    const ReferenceDetector det;
    Rng rng(21);
    for (int t = 0; t < 20; ++t) {
        const double x = 12 + rng.uniform() * 40, y = 12 + rng.uniform() * 40;
        const auto p = quiet_lesion(x, y, 100 + 200 * rng.uniform());
        const auto boxes = det.detect(normalize_range(p.volume.slice(0)));
        REQUIRE(boxes.size() == 1);
        CHECK(std::hypot(boxes[0].center_x() - x, boxes[0].center_y() - y) < 4.0);
        CHECK(boxes[0].width() == doctest::Approx(2.5 * det.params().lesion_radius));
    }
}

TEST_CASE("reference detector is flip-equivariant") {
    const ReferenceDetector det;
    PhantomConfig cfg;
    cfg.n_slices = 1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.seed = seed;
        const auto img = normalize_range(generate_volume(cfg, {}).volume.slice(0));
        const auto a = det.detect(img);
        auto b = det.detect(hflip(img));
        REQUIRE(a.size() == b.size());
        const double w = static_cast<double>(img.width());
        for (auto& box : b) box = make_box(w - box.x_max, box.y_min, w - box.x_min, box.y_max, box.score);
        for (const auto& box : a) {
            const bool matched = std::any_of(b.begin(), b.end(), [&](const ScoredBox& m) {
                return std::abs(m.center_x() - box.center_x()) <= 1.0 && std::abs(m.center_y() - box.center_y()) <= 1.0;
            });
            CHECK(matched);
        }
    }
}

TEST_CASE("mil image score is the max") {
    CHECK(mil_image_score({}) == 0.0);
    CHECK(mil_image_score(std::vector<ScoredBox>{make_box(0, 0, 1, 1, 0.2), make_box(0, 0, 1, 1, 0.7)}) == 0.7);
    Rng rng(22);
    std::vector<ScoredBox> boxes;
    double best = 0.0, prev = 0.0;
    for (int i = 0; i < 50; ++i) {
        boxes.push_back(make_box(0, 0, 1, 1, rng.uniform()));
        best = std::max(best, boxes.back().score);
        const double s = mil_image_score(boxes);
        CHECK(s == best);
        CHECK(s >= prev);
        prev = s;
    }
}

TEST_CASE("ensemble averages scorers and orientations") {
    const ImageGrid img(4, 4, 1.0);
    const std::vector<ScorerHandle> one{std::make_shared<FixedScorer>(0.4)};
    CHECK(ensemble_image_score(one, img) == 0.4);
    std::vector<ScorerHandle> three{std::make_shared<FixedScorer>(0.1), std::make_shared<FixedScorer>(0.5),
                                    std::make_shared<SidedScorer>()};
    ImageGrid sided(4, 1, std::vector<double>{9, 0, 0, 0});
    // six scores: 0.1, 0.1, 0.5, 0.5, 0.9, 0.1
    CHECK(ensemble_image_score(three, sided) == doctest::Approx(2.2 / 6.0).epsilon(1e-15));
    std::reverse(three.begin(), three.end());
    CHECK(ensemble_image_score(three, sided) == doctest::Approx(2.2 / 6.0).epsilon(1e-15));
    CHECK(ensemble_image_score(three, hflip(hflip(sided))) == ensemble_image_score(three, sided));
    CHECK_THROWS(ensemble_image_score(std::vector<ScorerHandle>{}, img));
}

TEST_CASE("breast and study aggregation") {
    const std::vector<ViewScore> views{{"c", Breast::Left, "CC", 0.2}, {"c", Breast::Left, "MLO", 0.4}};
    CHECK(breast_score(views) == doctest::Approx(0.3));
    CHECK(breast_score(std::vector<ViewScore>{views[0]}) == 0.2);
    const std::vector<ViewScore> mixed{{"c", Breast::Left, "CC", 0.2}, {"c", Breast::Right, "CC", 0.4}};
    CHECK_THROWS(breast_score(mixed));
    CHECK(study_score(std::vector<double>{0.1, 0.8}) == 0.8);
    CHECK(study_score(std::vector<double>{0.3}) == 0.3);
    CHECK(study_score(std::vector<double>{0.6, 0.6}) == 0.6);
    CHECK_THROWS(study_score(std::vector<double>{}));
    CHECK_THROWS(study_score(std::vector<double>{0.1, 0.2, 0.3}));
}

TEST_CASE("scorer JSON round-trip") {
    TempDir dir("scorer");
    ReferenceDetectorParams p;
    p.lesion_radius = 5.5;
    const auto ref = make_reference_scorer(p);
    const auto back = scorer_from_json(ref->to_json());
    CHECK(back->to_json() == ref->to_json());
    ToyScorer head{{0.5, -1, 2, 0.25}, -0.75};
    const ToyMilScorer toy(head, permissive_candidate_params());
    CHECK(scorer_from_json(toy.to_json())->to_json() == toy.to_json());
    CHECK_THROWS(scorer_from_json({{"type", "nope"}}));
    CHECK_THROWS_AS(load_scorer((dir.path / "missing.json").string()), IoError);
}

TEST_CASE("toy scorer always proposes a candidate") {
    const ToyMilScorer toy(ToyScorer{}, permissive_candidate_params());
    const auto boxes = toy.detect(ImageGrid(32, 32));
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].score == 0.5);
}

TEST_CASE("study scoring from a manifest") {
    TempDir dir("study");
    const auto a = quiet_lesion(20, 20, 200);
    const auto b = quiet_lesion(40, 40, 200);
    write_pgm(dir.path / "a.pgm", a.volume.slice(0));
    write_pgm(dir.path / "b.pgm", b.volume.slice(0));
    std::vector<StudyEntry> studies(1);
    studies[0].case_id = "s1";
    studies[0].label = true;
    studies[0].views = {{dir.path / "a.pgm", Breast::Left, "CC"}, {dir.path / "b.pgm", Breast::Right, "CC"}};
    write_study_manifest(dir.path / "study.json", studies);
    const auto back = read_study_manifest(dir.path / "study.json");
    REQUIRE(back.size() == 1);
    CHECK(back[0].views.size() == 2);
    const std::vector<ScorerHandle> scorers{std::make_shared<FixedScorer>(0.25)};
    const auto scores = score_studies(back, scorers, PreprocessConfig{0, true, 0.0});
    REQUIRE(scores.size() == 1);
    CHECK(scores[0].study == 0.25);
    write_scores_csv(dir.path / "scores.csv", scores);
    CHECK(std::filesystem::file_size(dir.path / "scores.csv") > 0);
}

TEST_CASE("preprocess ends in the normalized range") {
    ImageGrid img(40, 80);
    for (std::size_t y = 10; y < 70; ++y)
        for (std::size_t x = 0; x < 30; ++x) img(x, y) = 100.0 + static_cast<double>(x * y);
    const auto out = preprocess(img, PreprocessConfig{160, true, 0.0});
    const auto [lo, hi] = std::minmax_element(out.data().begin(), out.data().end());
    CHECK(*lo == -127.5);
    CHECK(*hi == 127.5);
    CHECK(out.height() < 160);  // cropped after the resize
}

}
