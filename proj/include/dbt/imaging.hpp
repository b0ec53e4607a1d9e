#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace dbt {

/// Row-major 2D intensity grid. Values are finite doubles; width and height
/// are at least 1.
class ImageGrid {
public:
    ImageGrid(std::size_t width, std::size_t height, double fill = 0.0);
    ImageGrid(std::size_t width, std::size_t height, std::vector<double> data);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }

    double operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }
    double& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    std::span<const double> row(std::size_t y) const { return {data_.data() + y * width_, width_}; }

    bool operator==(const ImageGrid&) const = default;

private:
    std::size_t width_;
    std::size_t height_;
    std::vector<double> data_;
};

/// Ordered stack of co-registered slices sharing one width and height.
class Volume {
public:
    explicit Volume(std::vector<ImageGrid> slices);

    std::size_t slice_count() const { return slices_.size(); }
    std::size_t width() const { return slices_.front().width(); }
    std::size_t height() const { return slices_.front().height(); }
    const ImageGrid& slice(std::size_t k) const { return slices_.at(k); }
    const std::vector<ImageGrid>& slices() const { return slices_; }

    bool operator==(const Volume&) const = default;

private:
    std::vector<ImageGrid> slices_;
};

struct PixelOffset {
    std::size_t x = 0;
    std::size_t y = 0;
    bool operator==(const PixelOffset&) const = default;
};

inline constexpr double kNormalizedHalfRange = 127.5;

// Bilinear, half-pixel-center sampling; width keeps the aspect ratio.
ImageGrid resize_to_height(const ImageGrid& img, std::size_t target_height);

/// Tightest rectangle holding every pixel brighter than `threshold`. With no
/// foreground the input comes back unchanged at offset (0, 0).
std::pair<ImageGrid, PixelOffset> crop_background(const ImageGrid& img, double threshold = 0.0);

/// Affine map of [min, max] onto [-127.5, 127.5]; constant images map to 0.
ImageGrid normalize_range(const ImageGrid& img);

/// Same affine map as normalize_range, but with min/max taken over the whole
/// volume so slice intensities stay comparable.
Volume normalize_volume(const Volume& vol);

ImageGrid hflip(const ImageGrid& img);

/// Separable Gaussian blur with mirrored borders. sigma <= 0 returns a copy.
ImageGrid gaussian_blur(const ImageGrid& img, double sigma);

/// Pixel-wise mean over slices.
ImageGrid mean_projection(const Volume& vol);

// ---- file IO -------------------------------------------------------------
//
// 2D grids are stored as binary PGM (P5, maxval 65535, big-endian samples).
// Values are rounded and clamped to [0, 65535] on write, so integer-valued
// grids in that range round-trip exactly.

void write_pgm(const std::filesystem::path& path, const ImageGrid& img);
ImageGrid read_pgm(const std::filesystem::path& path);

/// Writes `dir/manifest.json` plus `slice_000.pgm` ... one file per slice.
void write_volume(const std::filesystem::path& dir, const Volume& vol);
Volume read_volume(const std::filesystem::path& dir);

}  // namespace dbt
