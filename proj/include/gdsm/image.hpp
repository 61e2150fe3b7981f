#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gdsm/errors.hpp"

namespace gdsm {

// Dense row-major 2D scalar grid.
struct Image2D {
    int rows = 0;
    int cols = 0;
    std::vector<float> v;

    Image2D() = default;
    Image2D(int r, int c, float fill = 0.0f) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}

    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return v.size(); }

    bool operator==(const Image2D& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

// Per-image min-max rescale onto [0,1] (the 0..255-then-/255 intermediate
// cancels algebraically). Constant images map to all-zeros.
inline Image2D normalize_patch(const Image2D& img) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float x : img.v) {
        if (!std::isfinite(x)) throw NonFiniteInput("normalize_patch: non-finite intensity");
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    Image2D out(img.rows, img.cols);
    if (img.v.empty() || lo == hi) return out;
    // divide rather than multiply by the reciprocal so the max lands on
    // exactly 1.0 and a second pass is the identity
    const float range = hi - lo;
    for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = (img.v[i] - lo) / range;
    return out;
}

// Bilinear lookup at fractional coordinates; out-of-frame reads return `fill`.
inline float bilinear_sample(const Image2D& img, double r, double c, float fill = 0.0f) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0;
    const double fc = c - c0;
    auto pick = [&](int rr, int cc) -> double {
        if (rr < 0 || rr >= img.rows || cc < 0 || cc >= img.cols) return fill;
        return img.at(rr, cc);
    };
    const double top = pick(r0, c0) * (1.0 - fc) + pick(r0, c0 + 1) * fc;
    const double bot = pick(r0 + 1, c0) * (1.0 - fc) + pick(r0 + 1, c0 + 1) * fc;
    return static_cast<float>(top * (1.0 - fr) + bot * fr);
}

// Bilinear resize with corner-aligned sampling: output corners map exactly
// onto input corners.
inline Image2D resize_bilinear(const Image2D& img, int out_rows, int out_cols) {
    Image2D out(out_rows, out_cols);
    if (img.rows <= 0 || img.cols <= 0 || out_rows <= 0 || out_cols <= 0) return out;
    const double rstep = out_rows > 1 ? static_cast<double>(img.rows - 1) / (out_rows - 1) : 0.0;
    const double cstep = out_cols > 1 ? static_cast<double>(img.cols - 1) / (out_cols - 1) : 0.0;
    for (int r = 0; r < out_rows; ++r) {
        const double sr = r * rstep;
        for (int c = 0; c < out_cols; ++c) {
            out.at(r, c) = bilinear_sample(img, sr, c * cstep);
        }
    }
    return out;
}

}  // namespace gdsm
