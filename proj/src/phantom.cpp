#include "dbt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "dbt/common.hpp"
#include "dbt/json_util.hpp"

namespace dbt {

namespace {

// Radial profile: flat core out to half the radius, cosine taper to zero at
// the rim.
constexpr double kTaperFraction = 0.5;

double radial_profile(double r, double radius) {
    const double core = (1.0 - kTaperFraction) * radius;
    if (r <= core) return 1.0;
    if (r >= radius) return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (r - core) / (kTaperFraction * radius)));
}

enum StreamKey : std::uint64_t {
    kSharedTexture = 1,
    kSliceTexture = 2,
    kDistractorLayout = 3,
    kDistractorJitter = 4,
    kNoise = 5,
    kCohortLesion = 6,
    kCohortCase = 7,
};

// Blurred white noise scaled to unit variance (exact for the interior).
ImageGrid unit_texture(std::size_t w, std::size_t h, double scale, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> white(w * h);
    for (double& v : white) v = rng.normal();
    ImageGrid field = gaussian_blur(ImageGrid(w, h, std::move(white)), scale);

    const auto radius = static_cast<int>(std::ceil(3.0 * scale));
    double sum = 0.0, sum_sq = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double k = std::exp(-0.5 * i * i / (scale * scale));
        sum += k;
        sum_sq += k * k;
    }
    const double gain_1d = std::sqrt(sum_sq) / sum;
    const double inv_std = 1.0 / (gain_1d * gain_1d);
    for (double& v : field.data()) v *= inv_std;
    return field;
}

struct Distractor {
    double x;
    double y;
    double sigma;
    double amplitude;
};

void validate_lesion(const PhantomConfig& cfg, const LesionSpec& l, std::size_t index) {
    const auto where = "lesion " + std::to_string(index) + ": ";
    if (!(l.radius > 0.0) || !std::isfinite(l.radius)) throw ConfigError(where + "radius must be > 0");
    if (l.slice_extent < 1) throw ConfigError(where + "slice_extent must be >= 1");
    if (!std::isfinite(l.contrast)) throw ConfigError(where + "contrast must be finite");
    const auto w = static_cast<double>(cfg.width);
    const auto h = static_cast<double>(cfg.height);
    if (l.center_x - l.radius < 0.0 || l.center_x + l.radius > w || l.center_y - l.radius < 0.0 ||
        l.center_y + l.radius > h) {
        throw ConfigError(where + "disc at (" + std::to_string(l.center_x) + ", " + std::to_string(l.center_y) +
                          ") radius " + std::to_string(l.radius) + " leaves the " + std::to_string(cfg.width) + "x" +
                          std::to_string(cfg.height) + " grid");
    }
    if ((l.slice_extent - 1) / 2 > l.center_slice || l.last_slice() >= cfg.n_slices) {
        throw ConfigError(where + "slices outside the " + std::to_string(cfg.n_slices) + "-slice stack");
    }
}

}  // namespace

double LesionSpec::slice_weight(std::size_t k) const {
    if (k < first_slice() || k > last_slice()) return 0.0;
    const double d = static_cast<double>(k) - static_cast<double>(center_slice);
    const double half = 0.5 * static_cast<double>(slice_extent);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * d / (half + 0.5)));
}

double PhantomTruth::largest_malignant_size_mm() const {
    double best = 0.0;
    for (const auto& l : lesions) {
        if (l.malignant) best = std::max(best, l.tumor_size_mm());
    }
    return best;
}

void validate(const PhantomConfig& c) {
    if (c.width < 1 || c.height < 1 || c.n_slices < 1) throw ConfigError("phantom: width, height, n_slices must be >= 1");
    if (!(c.background_texture_scale > 0.0)) throw ConfigError("phantom: background_texture_scale must be > 0");
    if (c.texture_amplitude < 0.0 || c.noise_sigma < 0.0) throw ConfigError("phantom: amplitudes must be >= 0");
    if (!(c.texture_slice_correlation >= 0.0 && c.texture_slice_correlation <= 1.0)) {
        throw ConfigError("phantom: texture_slice_correlation must lie in [0, 1]");
    }
    if (!(c.distractor_sigma_min > 0.0) || c.distractor_sigma_max < c.distractor_sigma_min ||
        c.distractor_amplitude_max < c.distractor_amplitude_min || c.distractor_jitter < 0.0) {
        throw ConfigError("phantom: invalid distractor ranges");
    }
}

Phantom generate_volume(const PhantomConfig& cfg, const std::vector<LesionSpec>& lesions, std::string case_id) {
    validate(cfg);
    for (std::size_t i = 0; i < lesions.size(); ++i) validate_lesion(cfg, lesions[i], i);

    const std::size_t w = cfg.width;
    const std::size_t h = cfg.height;

    std::vector<Distractor> distractors;
    {
        Rng rng(derive_seed(cfg.seed, kDistractorLayout));
        for (std::size_t j = 0; j < cfg.clutter_density; ++j) {
            Distractor d{};
            d.x = rng.uniform() * static_cast<double>(w);
            d.y = rng.uniform() * static_cast<double>(h);
            d.sigma = cfg.distractor_sigma_min + rng.uniform() * (cfg.distractor_sigma_max - cfg.distractor_sigma_min);
            d.amplitude = cfg.distractor_amplitude_min +
                          rng.uniform() * (cfg.distractor_amplitude_max - cfg.distractor_amplitude_min);
            distractors.push_back(d);
        }
    }

    const bool textured = cfg.texture_amplitude > 0.0;
    const double shared_gain = cfg.texture_amplitude * std::sqrt(cfg.texture_slice_correlation);
    const double own_gain = cfg.texture_amplitude * std::sqrt(1.0 - cfg.texture_slice_correlation);
    const ImageGrid shared = textured ? unit_texture(w, h, cfg.background_texture_scale,
                                                     derive_seed(cfg.seed, kSharedTexture))
                                      : ImageGrid(w, h, 0.0);

    std::vector<std::vector<double>> slices(cfg.n_slices);
    parallel_for(cfg.n_slices, [&](std::size_t k) {
        std::vector<double> px(w * h, cfg.background_level);
        if (textured) {
            const ImageGrid own =
                unit_texture(w, h, cfg.background_texture_scale, derive_seed(cfg.seed, kSliceTexture, k));
            const auto s = shared.data();
            const auto o = own.data();
            for (std::size_t i = 0; i < px.size(); ++i) px[i] += shared_gain * s[i] + own_gain * o[i];
        }

        Rng jitter(derive_seed(cfg.seed, kDistractorJitter, k));
        for (const auto& d : distractors) {
            const double cx = d.x + cfg.distractor_jitter * jitter.normal();
            const double cy = d.y + cfg.distractor_jitter * jitter.normal();
            const double amp = d.amplitude * (1.0 + 0.05 * jitter.normal());
            const double inv = 1.0 / (2.0 * d.sigma * d.sigma);
            const double reach = 4.0 * d.sigma;
            const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - reach)));
            const auto x1 = static_cast<std::size_t>(std::clamp(std::ceil(cx + reach), 0.0, static_cast<double>(w)));
            const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - reach)));
            const auto y1 = static_cast<std::size_t>(std::clamp(std::ceil(cy + reach), 0.0, static_cast<double>(h)));
            for (std::size_t y = y0; y < y1; ++y) {
                const double dy = static_cast<double>(y) + 0.5 - cy;
                for (std::size_t x = x0; x < x1; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    px[y * w + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
                }
            }
        }

        for (const auto& l : lesions) {
            const double weight = l.slice_weight(k);
            if (weight == 0.0) continue;
            const auto x0 = static_cast<std::size_t>(std::floor(l.center_x - l.radius));
            const auto x1 = std::min(w, static_cast<std::size_t>(std::ceil(l.center_x + l.radius)));
            const auto y0 = static_cast<std::size_t>(std::floor(l.center_y - l.radius));
            const auto y1 = std::min(h, static_cast<std::size_t>(std::ceil(l.center_y + l.radius)));
            for (std::size_t y = y0; y < y1; ++y) {
                for (std::size_t x = x0; x < x1; ++x) {
                    const double r = std::hypot(static_cast<double>(x) + 0.5 - l.center_x,
                                                static_cast<double>(y) + 0.5 - l.center_y);
                    px[y * w + x] += l.contrast * weight * radial_profile(r, l.radius);
                }
            }
        }

        if (cfg.noise_sigma > 0.0) {
            Rng noise(derive_seed(cfg.seed, kNoise, k));
            for (double& v : px) v += cfg.noise_sigma * noise.normal();
        }
        for (double& v : px) v = std::clamp(std::nearbyint(v), 0.0, 65535.0);
        slices[k] = std::move(px);
    });

    std::vector<ImageGrid> grids;
    grids.reserve(cfg.n_slices);
    for (auto& s : slices) grids.emplace_back(w, h, std::move(s));

    PhantomTruth truth{std::move(case_id), lesions, false};
    truth.label = std::any_of(lesions.begin(), lesions.end(), [](const LesionSpec& l) { return l.malignant; });
    return Phantom{Volume(std::move(grids)), std::move(truth)};
}

ImageGrid project_dm(const Volume& vol) { return normalize_range(mean_projection(vol)); }

// ---- cohorts ---------------------------------------------------------------

void validate(const CohortConfig& c) {
    validate(c.phantom);
    if (c.n_cancer + c.n_negative == 0) throw ConfigError("cohort: no cases requested");
    if (!(c.radius_min > 0.0) || c.radius_max < c.radius_min) throw ConfigError("cohort: invalid radius range");
    if (c.contrast_max < c.contrast_min) throw ConfigError("cohort: invalid contrast range");
    if (c.extent_min < 1 || c.extent_max < c.extent_min) throw ConfigError("cohort: invalid slice extent range");
    if (c.extent_max > c.phantom.n_slices) throw ConfigError("cohort: slice extent exceeds the stack");
    const double margin = 2.0 * c.radius_max;
    if (margin >= static_cast<double>(std::min(c.phantom.width, c.phantom.height))) {
        throw ConfigError("cohort: lesions do not fit the grid");
    }
}

std::string cohort_case_id(const CohortConfig& cfg, std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", i);
    return cfg.id_prefix + "_" + buf;
}

PhantomConfig cohort_case_config(const CohortConfig& cfg, std::size_t i) {
    PhantomConfig pc = cfg.phantom;
    pc.seed = derive_seed(cfg.seed, kCohortCase, i);
    return pc;
}

std::vector<LesionSpec> cohort_lesions(const CohortConfig& cfg, std::size_t i) {
    if (i >= cfg.n_cancer) return {};
    Rng rng(derive_seed(cfg.seed, kCohortLesion, i));
    const auto& pc = cfg.phantom;
    LesionSpec l;
    l.radius = cfg.radius_min + rng.uniform() * (cfg.radius_max - cfg.radius_min);
    l.slice_extent = cfg.extent_min + rng.below(cfg.extent_max - cfg.extent_min + 1);
    l.contrast = std::round(cfg.contrast_min + rng.uniform() * (cfg.contrast_max - cfg.contrast_min));
    const double margin = l.radius + 1.0;
    l.center_x = margin + rng.uniform() * (static_cast<double>(pc.width) - 2.0 * margin);
    l.center_y = margin + rng.uniform() * (static_cast<double>(pc.height) - 2.0 * margin);

    // Center slice inside the untrimmed band so the lesion's peak is always
    // evaluated, and the whole extent inside the stack.
    const std::size_t skip = pc.n_slices / 10;
    const std::size_t lo_extent = (l.slice_extent - 1) / 2;
    const std::size_t hi_extent = l.slice_extent - 1 - lo_extent;
    std::size_t lo = std::max(skip, lo_extent);
    std::size_t hi = std::min(pc.n_slices - 1 - skip, pc.n_slices - 1 - hi_extent);
    if (hi < lo) {
        lo = lo_extent;
        hi = pc.n_slices - 1 - hi_extent;
    }
    l.center_slice = lo + rng.below(hi - lo + 1);
    l.malignant = true;
    return {l};
}

std::vector<Phantom> generate_cohort(const CohortConfig& cfg) {
    validate(cfg);
    const std::size_t n = cfg.n_cancer + cfg.n_negative;
    std::vector<std::optional<Phantom>> slots(n);
    parallel_for(n, [&](std::size_t i) {
        slots[i] = generate_volume(cohort_case_config(cfg, i), cohort_lesions(cfg, i), cohort_case_id(cfg, i));
    });
    std::vector<Phantom> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---- JSON ------------------------------------------------------------------

void to_json(nlohmann::json& j, const LesionSpec& l) {
    j = {{"center_x", l.center_x},   {"center_y", l.center_y},         {"radius", l.radius},
         {"center_slice", l.center_slice}, {"slice_extent", l.slice_extent}, {"contrast", l.contrast},
         {"malignant", l.malignant}, {"tumor_size_mm", l.tumor_size_mm()}};
}

void from_json(const nlohmann::json& j, LesionSpec& l) {
    check_keys(j, {"center_x", "center_y", "radius", "center_slice", "slice_extent", "contrast", "malignant",
                   "tumor_size_mm"},
               "lesion");
    read_field(j, "center_x", l.center_x);
    read_field(j, "center_y", l.center_y);
    read_field(j, "radius", l.radius);
    read_field(j, "center_slice", l.center_slice);
    read_field(j, "slice_extent", l.slice_extent);
    read_field(j, "contrast", l.contrast);
    read_field(j, "malignant", l.malignant);
}

void to_json(nlohmann::json& j, const PhantomTruth& t) {
    j = {{"case_id", t.case_id}, {"label", t.label}, {"lesions", t.lesions}};
    if (t.label) j["tumor_size_mm"] = t.largest_malignant_size_mm();
}

void from_json(const nlohmann::json& j, PhantomTruth& t) {
    check_keys(j, {"case_id", "label", "lesions", "tumor_size_mm"}, "truth");
    t.case_id = j.at("case_id").get<std::string>();
    t.lesions = j.value("lesions", std::vector<LesionSpec>{});
    t.label = j.value("label", false);
    const bool derived = std::any_of(t.lesions.begin(), t.lesions.end(), [](const auto& l) { return l.malignant; });
    if (t.label != derived) throw ConfigError("truth for " + t.case_id + ": label disagrees with lesion list");
}

void to_json(nlohmann::json& j, const PhantomConfig& c) {
    j = {{"width", c.width},
         {"height", c.height},
         {"n_slices", c.n_slices},
         {"background_level", c.background_level},
         {"background_texture_scale", c.background_texture_scale},
         {"texture_amplitude", c.texture_amplitude},
         {"texture_slice_correlation", c.texture_slice_correlation},
         {"clutter_density", c.clutter_density},
         {"distractor_amplitude_min", c.distractor_amplitude_min},
         {"distractor_amplitude_max", c.distractor_amplitude_max},
         {"distractor_sigma_min", c.distractor_sigma_min},
         {"distractor_sigma_max", c.distractor_sigma_max},
         {"distractor_jitter", c.distractor_jitter},
         {"noise_sigma", c.noise_sigma},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PhantomConfig& c) {
    check_keys(j, {"width", "height", "n_slices", "background_level", "background_texture_scale",
                   "texture_amplitude", "texture_slice_correlation", "clutter_density", "distractor_amplitude_min",
                   "distractor_amplitude_max", "distractor_sigma_min", "distractor_sigma_max", "distractor_jitter",
                   "noise_sigma", "seed"},
               "phantom");
    read_field(j, "width", c.width);
    read_field(j, "height", c.height);
    read_field(j, "n_slices", c.n_slices);
    read_field(j, "background_level", c.background_level);
    read_field(j, "background_texture_scale", c.background_texture_scale);
    read_field(j, "texture_amplitude", c.texture_amplitude);
    read_field(j, "texture_slice_correlation", c.texture_slice_correlation);
    read_field(j, "clutter_density", c.clutter_density);
    read_field(j, "distractor_amplitude_min", c.distractor_amplitude_min);
    read_field(j, "distractor_amplitude_max", c.distractor_amplitude_max);
    read_field(j, "distractor_sigma_min", c.distractor_sigma_min);
    read_field(j, "distractor_sigma_max", c.distractor_sigma_max);
    read_field(j, "distractor_jitter", c.distractor_jitter);
    read_field(j, "noise_sigma", c.noise_sigma);
    read_field(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const CohortConfig& c) {
    j = {{"phantom", c.phantom},         {"n_cancer", c.n_cancer},       {"n_negative", c.n_negative},
         {"radius_min", c.radius_min},   {"radius_max", c.radius_max},   {"contrast_min", c.contrast_min},
         {"contrast_max", c.contrast_max}, {"extent_min", c.extent_min}, {"extent_max", c.extent_max},
         {"seed", c.seed},               {"id_prefix", c.id_prefix}};
}

void from_json(const nlohmann::json& j, CohortConfig& c) {
    check_keys(j, {"phantom", "n_cancer", "n_negative", "radius_min", "radius_max", "contrast_min", "contrast_max",
                   "extent_min", "extent_max", "seed", "id_prefix"},
               "cohort");
    read_field(j, "phantom", c.phantom);
    read_field(j, "n_cancer", c.n_cancer);
    read_field(j, "n_negative", c.n_negative);
    read_field(j, "radius_min", c.radius_min);
    read_field(j, "radius_max", c.radius_max);
    read_field(j, "contrast_min", c.contrast_min);
    read_field(j, "contrast_max", c.contrast_max);
    read_field(j, "extent_min", c.extent_min);
    read_field(j, "extent_max", c.extent_max);
    read_field(j, "seed", c.seed);
    read_field(j, "id_prefix", c.id_prefix);
}

void write_truth(const std::filesystem::path& path, const std::vector<PhantomTruth>& truths) {
    nlohmann::json j;
    j["mm_per_pixel"] = kPhantomMmPerPixel;
    j["cases"] = truths;
    save_json(path, j);
}

std::vector<PhantomTruth> read_truth(const std::filesystem::path& path) {
    const auto j = load_json(path);
    if (!j.contains("cases")) throw IoError(path.string() + ": missing 'cases'");
    return j.at("cases").get<std::vector<PhantomTruth>>();
}

}  // namespace dbt
