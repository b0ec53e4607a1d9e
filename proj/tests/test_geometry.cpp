#include <doctest.h>

#include <algorithm>

#include "dbt/common.hpp"
#include "dbt/geometry.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dbt;

TEST_SUITE("geometry") {

TEST_CASE("iou by hand") {
    const auto a = make_box(0, 0, 10, 10, 0.5);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, make_box(20, 20, 30, 30, 0.5)) == 0.0);
    CHECK(iou(a, make_box(5, 0, 15, 10, 0.5)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou(a, make_box(10, 0, 20, 10, 0.5)) == 0.0);  // touching edge
}

TEST_CASE("box invariants are enforced") {
    CHECK_THROWS(make_box(1, 0, 1, 5, 0.5));
    CHECK_THROWS(make_box(0, 3, 1, 2, 0.5));
    CHECK_THROWS(make_box(0, 0, 1, 1, 1.5));
    CHECK_THROWS(make_box(0, 0, 1, 1, -0.1));
}

TEST_CASE("nms basics") {
    CHECK(nms({}, 0.2).empty());
    const auto b = make_box(0, 0, 10, 10, 0.9);
    CHECK(nms({b}, 0.2) == std::vector<ScoredBox>{b});
    const auto kept = nms({make_box(0, 0, 10, 10, 0.8), b}, 0.2);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
    // equality at the threshold survives
    const auto x = make_box(0, 0, 10, 10, 0.9), y = make_box(5, 0, 15, 10, 0.5);
    CHECK(nms_indices({x, y}, iou(x, y)).size() == 2);
    // ties keep the lower index
    CHECK(nms_indices({make_box(0, 0, 10, 10, 0.5), make_box(1, 0, 11, 10, 0.5)}, 0.2) ==
          std::vector<std::size_t>{0});
}

TEST_CASE("nms matches the brute-force oracle") {
    Rng rng(11);
    for (int t = 0; t < 300; ++t) {
        const auto boxes = oracle::random_boxes(rng, rng.below(51), t % 2 == 0);
        for (double thr : {0.0, 0.1, 0.2, 0.5, 1.0}) CHECK(nms_indices(boxes, thr) == oracle::nms(boxes, thr));
    }
}

TEST_CASE("nms properties") {
    Rng rng(12);
    for (int t = 0; t < 200; ++t) {
        const auto boxes = oracle::random_boxes(rng, 1 + rng.below(40), false);
        const double thr = 0.1 + 0.4 * rng.uniform();
        const auto idx = nms_indices(boxes, thr);
        const auto kept = nms(boxes, thr);
        // antichain
        for (std::size_t i = 0; i < kept.size(); ++i)
            for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(iou(kept[i], kept[j]) <= thr);
        // descending scores
        CHECK(std::is_sorted(kept.begin(), kept.end(), [](auto& a, auto& b) { return a.score > b.score; }));
        // idempotent
        CHECK(nms(kept, thr) == kept);
        // scale invariance of the index set
        auto scaled = boxes;
        for (auto& b : scaled) b.x_min *= 4, b.x_max *= 4, b.y_min *= 4, b.y_max *= 4;
        CHECK(nms_indices(scaled, thr) == idx);
        // strictly increasing score transform
        auto squashed = boxes;
        for (auto& b : squashed) b.score = b.score * b.score * b.score;
        CHECK(nms_indices(squashed, thr) == idx);
    }
}

TEST_CASE("box csv round-trip") {
    TempDir dir("geom");
    const std::vector<ScoredBox> boxes{make_box(0.125, 1, 3.5, 7, 0.3333333333333333, 4), make_box(1, 2, 3, 4, 1.0)};
    write_boxes_csv(dir.path / "b.csv", boxes);
    CHECK(read_boxes_csv(dir.path / "b.csv") == boxes);
    CHECK(to_csv_row(boxes[1]).back() == ',');
    CHECK_THROWS(parse_box_csv_row("1,2,3"));
}

TEST_CASE("format_double round-trips") {
    Rng rng(13);
    for (int i = 0; i < 1000; ++i) {
        const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(20)) - 10);
        CHECK(std::stod(format_double(v)) == v);
    }
}

}
