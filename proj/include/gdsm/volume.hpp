#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gdsm/errors.hpp"
#include "gdsm/image.hpp"

namespace gdsm {

// Anatomical planes with their integer codes. Axis convention is fixed:
// x = sagittal, y = coronal, z = axial (MNI152 dimension order 182x218x182).
enum class Plane : int { axial = 0, coronal = 1, sagittal = 2 };

inline const char* plane_name(Plane p) {
    switch (p) {
        case Plane::axial: return "axial";
        case Plane::coronal: return "coronal";
        default: return "sagittal";
    }
}

inline constexpr std::array<Plane, 3> kAllPlanes{Plane::axial, Plane::coronal, Plane::sagittal};

struct Dims {
    int nx = 0, ny = 0, nz = 0;
    bool operator==(const Dims&) const = default;
    std::size_t voxels() const { return static_cast<std::size_t>(nx) * ny * nz; }
    std::string str() const {
        return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nz) + ")";
    }
};

inline constexpr Dims kDims1mm{182, 218, 182};
inline constexpr Dims kDims2mm{91, 109, 91};

// Slicing axis length for a plane.
inline int axis_length(const Dims& d, Plane p) {
    switch (p) {
        case Plane::axial: return d.nz;
        case Plane::coronal: return d.ny;
        default: return d.nx;
    }
}

// Registered scalar voxel grid. Storage is x-fastest: v[x + nx*(y + ny*z)].
struct Volume3D {
    Dims dims;
    std::array<float, 3> spacing_mm{1.0f, 1.0f, 1.0f};
    std::vector<float> v;

    Volume3D() = default;
    Volume3D(Dims d, std::array<float, 3> spacing, float fill = 0.0f)
        : dims(d), spacing_mm(spacing), v(d.voxels(), fill) {}

    float& at(int x, int y, int z) {
        return v[static_cast<std::size_t>(x) + dims.nx * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.ny) * z)];
    }
    float at(int x, int y, int z) const {
        return v[static_cast<std::size_t>(x) + dims.nx * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims.ny) * z)];
    }

    void validate_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) throw NonFiniteInput("volume contains non-finite intensities");
    }
};

// Extract a 2D cross-section. Shapes: axial -> (nx, ny), coronal -> (nx, nz),
// sagittal -> (ny, nz); the image is row-major in the first listed dimension.
inline Image2D extract_slice(const Volume3D& vol, Plane plane, int index) {
    const Dims& d = vol.dims;
    if (index < 0 || index >= axis_length(d, plane))
        throw IntervalOutOfBounds("slice index " + std::to_string(index) + " outside " +
                                  std::string(plane_name(plane)) + " axis of length " +
                                  std::to_string(axis_length(d, plane)));
    switch (plane) {
        case Plane::axial: {
            Image2D img(d.nx, d.ny);
            for (int x = 0; x < d.nx; ++x)
                for (int y = 0; y < d.ny; ++y) img.at(x, y) = vol.at(x, y, index);
            return img;
        }
        case Plane::coronal: {
            Image2D img(d.nx, d.nz);
            for (int x = 0; x < d.nx; ++x)
                for (int z = 0; z < d.nz; ++z) img.at(x, z) = vol.at(x, index, z);
            return img;
        }
        default: {
            Image2D img(d.ny, d.nz);
            for (int y = 0; y < d.ny; ++y)
                for (int z = 0; z < d.nz; ++z) img.at(y, z) = vol.at(index, y, z);
            return img;
        }
    }
}

// 2x block-mean downsample; requires even dimensions. Accumulates in double
// so the 1 mm and 2 mm volume means agree to float precision.
inline Volume3D block_mean_downsample2(const Volume3D& vol) {
    const Dims& d = vol.dims;
    if (d.nx % 2 || d.ny % 2 || d.nz % 2)
        throw DimsMismatch("block_mean_downsample2 requires even dims, got " + d.str());
    Volume3D out(Dims{d.nx / 2, d.ny / 2, d.nz / 2},
                 {vol.spacing_mm[0] * 2, vol.spacing_mm[1] * 2, vol.spacing_mm[2] * 2});
    for (int z = 0; z < out.dims.nz; ++z)
        for (int y = 0; y < out.dims.ny; ++y)
            for (int x = 0; x < out.dims.nx; ++x) {
                double acc = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) acc += vol.at(2 * x + dx, 2 * y + dy, 2 * z + dz);
                out.at(x, y, z) = static_cast<float>(acc / 8.0);
            }
    return out;
}

}  // namespace gdsm
