#pragma once

#include <cmath>
#include <vector>

#include "gdsm/extract.hpp"
#include "gdsm/rng.hpp"

namespace gdsm {

// Table 3 settings plus the stream-specific copy counts. Vertical flips are
// configured here but never applied to global-stream patches.
struct AugmentationConfig {
    double rotation_deg_max = 20.0;
    double width_shift_frac = 0.1;
    double height_shift_frac = 0.1;
    bool horizontal_flip = true;
    bool vertical_flip = true;
    Interval local_count_range{0, 6};
    Interval global_count_range{0, 10};
};

namespace detail {

struct AugmentParams {
    double rot_rad = 0.0;
    double shift_rows = 0.0;
    double shift_cols = 0.0;
    bool hflip = false;
    bool vflip = false;
};

// Inverse-mapped affine warp: rotate about the image center, translate, and
// optionally mirror. Out-of-frame pixels fill with 0 (the skull-stripped
// background); values are clipped back to [0,1].
inline Image2D warp(const Image2D& img, const AugmentParams& p) {
    Image2D out(img.rows, img.cols);
    const double cr = (img.rows - 1) / 2.0;
    const double cc = (img.cols - 1) / 2.0;
    const double cs = std::cos(p.rot_rad);
    const double sn = std::sin(p.rot_rad);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c) {
            const double u = r - cr - p.shift_rows;
            const double w = c - cc - p.shift_cols;
            double sr = cr + cs * u + sn * w;
            double sc = cc - sn * u + cs * w;
            if (p.vflip) sr = (img.rows - 1) - sr;
            if (p.hflip) sc = (img.cols - 1) - sc;
            float value = bilinear_sample(img, sr, sc, 0.0f);
            out.at(r, c) = std::min(1.0f, std::max(0.0f, value));
        }
    }
    return out;
}

}  // namespace detail

// Draws a copy count from the stream's range and produces that many
// independently transformed copies. Labels and targets are carried over
// unchanged; output shape equals input shape. Pure in (patch, config, seed).
inline std::vector<ExtractedPatch> augment(const ExtractedPatch& patch, const AugmentationConfig& config,
                                           std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    const Interval range =
        patch.stream == Stream::global ? config.global_count_range : config.local_count_range;
    const long k = rng.uniform_int(range.lo, range.hi);

    const bool allow_vflip = config.vertical_flip && patch.stream != Stream::global;
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

    std::vector<ExtractedPatch> out;
    out.reserve(static_cast<std::size_t>(k));
    for (long i = 0; i < k; ++i) {
        detail::AugmentParams p;
        p.rot_rad = rng.uniform(-config.rotation_deg_max, config.rotation_deg_max) * kDegToRad;
        p.shift_cols = rng.uniform(-config.width_shift_frac, config.width_shift_frac) * patch.image.cols;
        p.shift_rows = rng.uniform(-config.height_shift_frac, config.height_shift_frac) * patch.image.rows;
        p.hflip = config.horizontal_flip && rng.bernoulli(0.5);
        p.vflip = allow_vflip && rng.bernoulli(0.5);

        ExtractedPatch copy = patch;
        copy.augmented = true;
        copy.aug_seed = rng_seed;
        copy.image = detail::warp(patch.image, p);
        out.push_back(std::move(copy));
    }
    return out;
}

}  // namespace gdsm
