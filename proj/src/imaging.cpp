#include "dbt/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dbt/common.hpp"

namespace dbt {

ImageGrid::ImageGrid(std::size_t width, std::size_t height, double fill)
    : ImageGrid(width, height, std::vector<double>(width * height, fill)) {}

ImageGrid::ImageGrid(std::size_t width, std::size_t height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width_ == 0 || height_ == 0) throw std::invalid_argument("ImageGrid: width and height must be >= 1");
    if (data_.size() != width_ * height_) {
        throw std::invalid_argument("ImageGrid: data length " + std::to_string(data_.size()) + " != " +
                                    std::to_string(width_) + "x" + std::to_string(height_));
    }
    if (!std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); })) {
        throw std::invalid_argument("ImageGrid: non-finite intensity");
    }
}

Volume::Volume(std::vector<ImageGrid> slices) : slices_(std::move(slices)) {
    if (slices_.empty()) throw std::invalid_argument("Volume: at least one slice required");
    for (const auto& s : slices_) {
        if (s.width() != slices_.front().width() || s.height() != slices_.front().height()) {
            throw std::invalid_argument("Volume: slices differ in size");
        }
    }
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// Half-pixel-center source coordinate for each destination sample.
std::vector<Tap> resample_taps(std::size_t src, std::size_t dst) {
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    const double last = static_cast<double>(src - 1);
    for (std::size_t i = 0; i < dst; ++i) {
        double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, last);
        const auto lo = static_cast<std::size_t>(std::floor(s));
        const std::size_t hi = std::min(lo + 1, src - 1);
        taps[i] = {lo, hi, s - static_cast<double>(lo)};
    }
    return taps;
}

inline double lerp_exact(double a, double b, double t) {
    // a + t*(b - a) keeps constant inputs exact.
    return a + t * (b - a);
}

// Half-sample symmetric reflection into [0, n).
inline std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<std::ptrdiff_t>(n)) m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

}  // namespace

ImageGrid resize_to_height(const ImageGrid& img, std::size_t target_height) {
    if (target_height == 0) throw std::invalid_argument("resize_to_height: target_height must be >= 1");
    const double ratio = static_cast<double>(target_height) / static_cast<double>(img.height());
    const auto target_width =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(img.width()) * ratio)));
    if (target_width == img.width() && target_height == img.height()) return img;

    const auto xs = resample_taps(img.width(), target_width);
    const auto ys = resample_taps(img.height(), target_height);
    ImageGrid out(target_width, target_height);
    for (std::size_t y = 0; y < target_height; ++y) {
        const auto& ty = ys[y];
        for (std::size_t x = 0; x < target_width; ++x) {
            const auto& tx = xs[x];
            const double top = lerp_exact(img(tx.lo, ty.lo), img(tx.hi, ty.lo), tx.frac);
            const double bottom = lerp_exact(img(tx.lo, ty.hi), img(tx.hi, ty.hi), tx.frac);
            out(x, y) = lerp_exact(top, bottom, ty.frac);
        }
    }
    return out;
}

std::pair<ImageGrid, PixelOffset> crop_background(const ImageGrid& img, double threshold) {
    std::size_t x0 = img.width(), y0 = img.height(), x1 = 0, y1 = 0;
    bool any = false;
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) {
            if (img(x, y) > threshold) {
                any = true;
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
        }
    }
    if (!any) return {img, PixelOffset{}};

    const std::size_t w = x1 - x0 + 1;
    const std::size_t h = y1 - y0 + 1;
    std::vector<double> data;
    data.reserve(w * h);
    for (std::size_t y = y0; y <= y1; ++y) {
        const auto r = img.row(y);
        data.insert(data.end(), r.begin() + static_cast<std::ptrdiff_t>(x0),
                    r.begin() + static_cast<std::ptrdiff_t>(x1 + 1));
    }
    return {ImageGrid(w, h, std::move(data)), PixelOffset{x0, y0}};
}

namespace {

ImageGrid affine_to_range(const ImageGrid& img, double lo, double hi) {
    if (!(hi > lo)) return ImageGrid(img.width(), img.height(), 0.0);
    const double span = hi - lo;
    std::vector<double> out(img.size());
    const auto src = img.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (src[i] - lo) / span * (2.0 * kNormalizedHalfRange) - kNormalizedHalfRange;
    }
    return ImageGrid(img.width(), img.height(), std::move(out));
}

}  // namespace

ImageGrid normalize_range(const ImageGrid& img) {
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    return affine_to_range(img, *lo, *hi);
}

Volume normalize_volume(const Volume& vol) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : vol.slices()) {
        const auto [a, b] = std::minmax_element(s.data().begin(), s.data().end());
        lo = std::min(lo, *a);
        hi = std::max(hi, *b);
    }
    std::vector<ImageGrid> out;
    out.reserve(vol.slice_count());
    for (const auto& s : vol.slices()) out.push_back(affine_to_range(s, lo, hi));
    return Volume(std::move(out));
}

ImageGrid hflip(const ImageGrid& img) {
    ImageGrid out(img.width(), img.height());
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) out(img.width() - 1 - x, y) = img(x, y);
    }
    return out;
}

ImageGrid gaussian_blur(const ImageGrid& img, double sigma) {
    if (!(sigma > 0.0)) return img;
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const std::size_t w = img.width();
    const std::size_t h = img.height();

    std::vector<std::size_t> xmap(w + 2 * static_cast<std::size_t>(radius));
    for (std::size_t i = 0; i < xmap.size(); ++i) xmap[i] = mirror(static_cast<std::ptrdiff_t>(i) - radius, w);
    std::vector<std::size_t> ymap(h + 2 * static_cast<std::size_t>(radius));
    for (std::size_t i = 0; i < ymap.size(); ++i) ymap[i] = mirror(static_cast<std::ptrdiff_t>(i) - radius, h);

    std::vector<double> tmp(w * h);
    const auto src = img.data();
    for (std::size_t y = 0; y < h; ++y) {
        const double* row = src.data() + y * w;
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kernel.size(); ++k) acc += kernel[k] * row[xmap[x + k]];
            tmp[y * w + x] = acc;
        }
    }

    std::vector<double> out(w * h, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        double* dst = out.data() + y * w;
        for (std::size_t k = 0; k < kernel.size(); ++k) {
            const double* srow = tmp.data() + ymap[y + k] * w;
            const double kv = kernel[k];
            for (std::size_t x = 0; x < w; ++x) dst[x] += kv * srow[x];
        }
    }
    return ImageGrid(w, h, std::move(out));
}

ImageGrid mean_projection(const Volume& vol) {
    std::vector<double> acc(vol.width() * vol.height(), 0.0);
    for (const auto& s : vol.slices()) {
        const auto d = s.data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    const auto n = static_cast<double>(vol.slice_count());
    for (double& v : acc) v /= n;
    return ImageGrid(vol.width(), vol.height(), std::move(acc));
}

}  // namespace dbt
