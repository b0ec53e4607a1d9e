#include <doctest.h>

#include <cmath>

#include "dbt/common.hpp"
#include "dbt/phantom.hpp"
#include "dbt/pipeline.hpp"
#include "test_util.hpp"

using namespace dbt;

namespace {

PhantomConfig quiet(std::size_t slices = 10) {
    PhantomConfig c;
    c.n_slices = slices;
    c.clutter_density = 0;
    c.noise_sigma = 0.0;
    c.texture_amplitude = 0.0;
    return c;
}

LesionSpec lesion(double contrast, std::size_t slice, std::size_t extent = 1) {
    LesionSpec l;
    l.center_x = 32.5;
    l.center_y = 30.5;
    l.radius = 4.0;
    l.center_slice = slice;
    l.slice_extent = extent;
    l.contrast = contrast;
    return l;
}

}  // namespace

TEST_SUITE("phantom") {

TEST_CASE("noiseless lesion adds exactly its contrast at the center") {
    const auto p = generate_volume(quiet(), {lesion(150, 4)});
    const auto& s = p.volume.slice(4);
    CHECK(s(32, 30) - s(2, 2) == 150.0);
    CHECK(p.volume.slice(3)(32, 30) == s(2, 2));
    CHECK(p.truth.label);
}

TEST_CASE("generation is deterministic and labels follow malignancy") {
    PhantomConfig cfg;
    cfg.seed = 99;
    const auto a = generate_volume(cfg, {lesion(100, 10, 3)});
    const auto b = generate_volume(cfg, {lesion(100, 10, 3)});
    CHECK(a.volume == b.volume);
    CHECK_FALSE(generate_volume(cfg, {}).truth.label);
    auto benign = lesion(100, 10);
    benign.malignant = false;
    CHECK_FALSE(generate_volume(cfg, {benign}).truth.label);
    CHECK(generate_volume(cfg, {benign, lesion(80, 5)}).truth.label);
}

TEST_CASE("out-of-bounds lesions are rejected") {
    auto l = lesion(100, 4);
    l.center_x = 2.0;
    CHECK_THROWS_AS(generate_volume(quiet(), {l}), ConfigError);
    CHECK_THROWS_AS(generate_volume(quiet(), {lesion(100, 10)}), ConfigError);
    CHECK_THROWS_AS(generate_volume(quiet(), {lesion(100, 0, 3)}), ConfigError);
}

TEST_CASE("slice weights peak on the center slice") {
    const auto l = lesion(1, 8, 5);
    CHECK(l.slice_weight(8) == 1.0);
    CHECK(l.slice_weight(7) < 1.0);
    CHECK(l.slice_weight(7) == l.slice_weight(9));
    CHECK(l.slice_weight(6) > 0.0);
    CHECK(l.slice_weight(5) == 0.0);
    CHECK(l.slice_weight(11) == 0.0);
}

TEST_CASE("projection dilutes lesion contrast") {
    const auto one = generate_volume(quiet(1), {lesion(200, 0)});
    CHECK(project_dm(one.volume) == normalize_range(one.volume.slice(0)));

    const auto flat = generate_volume(quiet(), {});
    const auto zeros = project_dm(flat.volume);
    for (double v : zeros.data()) CHECK(v == 0.0);

    const auto p = generate_volume(quiet(), {lesion(200, 4)});
    const auto mp = mean_projection(p.volume);
    CHECK(mp(32, 30) - mp(2, 2) == doctest::Approx(200.0 / 10.0).epsilon(1e-12));

    // extended lesion: dilution by the summed slice weights over n
    const auto l = lesion(200, 5, 3);
    const auto q = generate_volume(quiet(), {l});
    double wsum = 0;
    for (std::size_t k = 0; k < 10; ++k) wsum += l.slice_weight(k);
    const auto mq = mean_projection(q.volume);
    // rounding to integers per slice costs at most 0.5 each
    CHECK(std::abs(mq(32, 30) - mq(2, 2) - 200.0 * wsum / 10.0) <= 0.5);
}

TEST_CASE("cohort generation") {
    CohortConfig c;
    c.n_cancer = 4;
    c.n_negative = 3;
    c.seed = 5;
    c.phantom.width = 48;
    c.phantom.height = 48;
    c.phantom.n_slices = 10;
    const auto cohort = generate_cohort(c);
    REQUIRE(cohort.size() == 7);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        CHECK(cohort[i].truth.label == (i < 4));
        CHECK(cohort[i].truth.case_id == cohort_case_id(c, i));
        for (const auto& l : cohort[i].truth.lesions) {
            CHECK(l.radius >= c.radius_min);
            CHECK(l.radius <= c.radius_max);
            CHECK(l.contrast >= c.contrast_min);
            CHECK(l.contrast <= c.contrast_max);
        }
    }
    CHECK(cohort[0].truth.largest_malignant_size_mm() ==
          doctest::Approx(2 * cohort[0].truth.lesions[0].radius * kPhantomMmPerPixel));

    set_max_threads(1);
    const auto serial = generate_cohort(c);
    set_max_threads(0);
    for (std::size_t i = 0; i < cohort.size(); ++i) CHECK(serial[i].volume == cohort[i].volume);
}

TEST_CASE("config validation") {
    CohortConfig c;
    c.contrast_min = 50;
    c.contrast_max = 10;
    CHECK_THROWS_AS(validate(c), ConfigError);
    PhantomConfig p;
    p.n_slices = 0;
    CHECK_THROWS_AS(validate(p), ConfigError);
    p = PhantomConfig{};
    p.background_texture_scale = 0;
    CHECK_THROWS_AS(validate(p), ConfigError);
}

TEST_CASE("truth and cohort files round-trip") {
    TempDir dir("phantom");
    CohortConfig c;
    c.n_cancer = 2;
    c.n_negative = 1;
    c.phantom.n_slices = 6;
    const auto cohort = generate_cohort(c);
    write_cohort(dir.path, cohort);
    const auto index = read_cohort_index(dir.path);
    REQUIRE(index.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(index[i].truth.case_id == cohort[i].truth.case_id);
        CHECK(index[i].truth.lesions == cohort[i].truth.lesions);
        CHECK(read_volume(index[i].volume_dir) == cohort[i].volume);
    }
    CHECK(nlohmann::json(c).get<CohortConfig>() == c);
}

}
