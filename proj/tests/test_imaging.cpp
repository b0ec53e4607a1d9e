#include <doctest.h>

#include <algorithm>

#include "dbt/common.hpp"
#include "dbt/imaging.hpp"
#include "test_util.hpp"

using namespace dbt;

namespace {

ImageGrid random_grid(Rng& rng, std::size_t w, std::size_t h, double scale = 1000.0) {
    ImageGrid g(w, h);
    for (auto& v : g.data()) v = rng.uniform() * scale;
    return g;
}

}  // namespace

TEST_SUITE("imaging") {

TEST_CASE("resize keeps identity scale and aspect ratio") {
    Rng rng(1);
    const auto img = random_grid(rng, 100, 200);
    CHECK(resize_to_height(img, 200) == img);
    const auto half = resize_to_height(img, 100);
    CHECK(half.width() == 50);
    CHECK(half.height() == 100);
    CHECK(resize_to_height(ImageGrid(3, 1000), 1).width() == 1);
}

TEST_CASE("resize of a constant image stays constant") {
    const ImageGrid flat(64, 64, 417.25);
    const auto big = resize_to_height(flat, 1750);
    CHECK(big.height() == 1750);
    CHECK(big.width() == 1750);
    CHECK(std::all_of(big.data().begin(), big.data().end(), [](double v) { return v == 417.25; }));
}

TEST_CASE("crop finds the foreground rectangle") {
    ImageGrid img(40, 30);
    for (std::size_t y = 10; y <= 20; ++y)
        for (std::size_t x = 5; x <= 15; ++x) img(x, y) = 1 + x + y;
    const auto [crop, off] = crop_background(img);
    CHECK(crop.width() == 11);
    CHECK(crop.height() == 11);
    CHECK(off == PixelOffset{5, 10});
    CHECK(crop(0, 0) == img(5, 10));

    // scan oracle on random sparse images
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        ImageGrid r(1 + rng.below(20), 1 + rng.below(20));
        for (auto& v : r.data()) v = rng.uniform() < 0.1 ? 5.0 : 0.0;
        std::size_t x0 = r.width(), x1 = 0, y0 = r.height(), y1 = 0;
        for (std::size_t y = 0; y < r.height(); ++y)
            for (std::size_t x = 0; x < r.width(); ++x)
                if (r(x, y) > 0) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        const auto [c, o] = crop_background(r);
        if (x0 == r.width()) {
            CHECK(c == r);
            CHECK(o == PixelOffset{0, 0});
            continue;
        }
        CHECK(o == PixelOffset{x0, y0});
        CHECK(c.width() == x1 - x0 + 1);
        CHECK(c.height() == y1 - y0 + 1);
        // idempotent
        const auto [c2, o2] = crop_background(c);
        CHECK(c2 == c);
        CHECK(o2 == PixelOffset{0, 0});
    }
}

TEST_CASE("crop fallbacks") {
    const ImageGrid zeros(7, 5);
    const auto [c, o] = crop_background(zeros);
    CHECK(c == zeros);
    CHECK(o == PixelOffset{0, 0});
    const ImageGrid full(7, 5, 3.0);
    const auto [f, fo] = crop_background(full);
    CHECK(f == full);
    CHECK(fo == PixelOffset{0, 0});
}

TEST_CASE("normalize_range maps onto +-127.5") {
    const auto two = normalize_range(ImageGrid(2, 1, std::vector<double>{0, 255}));
    CHECK(two(0, 0) == -127.5);
    CHECK(two(1, 0) == 127.5);
    const auto three = normalize_range(ImageGrid(3, 1, std::vector<double>{0, 127.5, 255}));
    CHECK(three(1, 0) == doctest::Approx(0.0));
    const auto flat = normalize_range(ImageGrid(4, 4, 9.0));
    CHECK(std::all_of(flat.data().begin(), flat.data().end(), [](double v) { return v == 0.0; }));

    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const auto n = normalize_range(random_grid(rng, 1 + rng.below(30), 2 + rng.below(30), 1e4));
        const auto [lo, hi] = std::minmax_element(n.data().begin(), n.data().end());
        CHECK(*lo == -kNormalizedHalfRange);
        CHECK(*hi == kNormalizedHalfRange);
    }
}

TEST_CASE("hflip is a column reversal and an involution") {
    const auto ab = hflip(ImageGrid(2, 1, std::vector<double>{1, 2}));
    CHECK(ab(0, 0) == 2);
    CHECK(ab(1, 0) == 1);
    const ImageGrid sym(3, 1, std::vector<double>{4, 7, 4});
    CHECK(hflip(sym) == sym);
    Rng rng(4);
    const auto img = random_grid(rng, 13, 9);
    CHECK(hflip(hflip(img)) == img);
}

TEST_CASE("mean projection and volume normalization") {
    Volume vol({ImageGrid(2, 1, std::vector<double>{0, 10}), ImageGrid(2, 1, std::vector<double>{20, 30})});
    const auto mp = mean_projection(vol);
    CHECK(mp(0, 0) == 10);
    CHECK(mp(1, 0) == 20);
    const auto nv = normalize_volume(vol);
    CHECK(nv.slice(0)(0, 0) == -127.5);
    CHECK(nv.slice(1)(1, 0) == 127.5);
    CHECK_THROWS(Volume({ImageGrid(2, 2), ImageGrid(3, 2)}));
}

TEST_CASE("PGM and volume files round-trip exactly") {
    TempDir dir("imaging");
    Rng rng(5);
    ImageGrid img(17, 11);
    for (auto& v : img.data()) v = static_cast<double>(rng.below(65536));
    write_pgm(dir.path / "a.pgm", img);
    CHECK(read_pgm(dir.path / "a.pgm") == img);

    std::vector<ImageGrid> slices;
    for (int k = 0; k < 4; ++k) {
        ImageGrid s(9, 6);
        for (auto& v : s.data()) v = static_cast<double>(rng.below(4000));
        slices.push_back(s);
    }
    const Volume vol(slices);
    write_volume(dir.path / "vol", vol);
    CHECK(read_volume(dir.path / "vol") == vol);
    CHECK_THROWS_AS(read_pgm(dir.path / "missing.pgm"), IoError);
}

TEST_CASE("gaussian blur keeps constants") {
    const ImageGrid flat(20, 12, 3.5);
    const auto b = gaussian_blur(flat, 2.0);
    for (double v : b.data()) CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
}

}
