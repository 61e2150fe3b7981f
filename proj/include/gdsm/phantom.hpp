#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gdsm/errors.hpp"
#include "gdsm/extract.hpp"
#include "gdsm/manifest.hpp"
#include "gdsm/rng.hpp"
#include "gdsm/volume.hpp"
#include "gdsm/volume_io.hpp"

namespace gdsm {

inline constexpr double kPhantomAgeMin = 19.0;
inline constexpr double kPhantomAgeMax = 77.0;

// Synthetic subject controls. Region radii scale with
// (1 - shrink_rate * (age - 19)), the central ventricle with
// (1 + ventricle_growth_rate * (age - 19)), and the outer brain shell with
// half the region shrink rate, so total foreground is strictly monotone in
// age at zero noise.
struct PhantomParams {
    double age = kPhantomAgeMin;
    Gender gender = Gender::female;
    double noise_sigma = 4.0;
    std::uint64_t seed = 0;
    double shrink_rate = 0.004;
    double ventricle_growth_rate = 0.006;

    double region_scale() const { return 1.0 - shrink_rate * (age - kPhantomAgeMin); }
    double brain_scale() const { return 1.0 - 0.5 * shrink_rate * (age - kPhantomAgeMin); }
    double ventricle_scale() const { return 1.0 + ventricle_growth_rate * (age - kPhantomAgeMin); }

    void validate() const {
        if (!std::isfinite(age) || age < kPhantomAgeMin || age > kPhantomAgeMax)
            throw InvalidParams("phantom age must lie in [19,77]");
        if (!(noise_sigma >= 0.0)) throw InvalidParams("noise_sigma must be >= 0");
        if (!(shrink_rate >= 0.0) || !(ventricle_growth_rate >= 0.0))
            throw InvalidParams("shrink/growth rates must be >= 0");
        if (region_scale() <= 0.0 || brain_scale() <= 0.0)
            throw InvalidParams("shrink_rate collapses regions within the supported age range");
    }
};

namespace detail {

struct Ellipsoid {
    std::array<double, 3> center;  // (x, y, z) in 1 mm voxel coordinates
    std::array<double, 3> radii;
};

inline void fill_ellipsoid(Volume3D& vol, const Ellipsoid& e, float value) {
    const auto& [cx, cy, cz] = e.center;
    const auto& [rx, ry, rz] = e.radii;
    const int z0 = std::max(0, static_cast<int>(std::ceil(cz - rz)));
    const int z1 = std::min(vol.dims.nz - 1, static_cast<int>(std::floor(cz + rz)));
    for (int z = z0; z <= z1; ++z) {
        const double qz = ((z - cz) / rz) * ((z - cz) / rz);
        if (qz > 1.0) continue;
        const double ry_eff = ry * std::sqrt(1.0 - qz);
        const int y0 = std::max(0, static_cast<int>(std::ceil(cy - ry_eff)));
        const int y1 = std::min(vol.dims.ny - 1, static_cast<int>(std::floor(cy + ry_eff)));
        for (int y = y0; y <= y1; ++y) {
            const double qy = ((y - cy) / ry) * ((y - cy) / ry);
            const double rem = 1.0 - qz - qy;
            if (rem <= 0.0) continue;
            const double rx_eff = rx * std::sqrt(rem);
            const int x0 = std::max(0, static_cast<int>(std::ceil(cx - rx_eff)));
            const int x1 = std::min(vol.dims.nx - 1, static_cast<int>(std::floor(cx + rx_eff)));
            for (int x = x0; x <= x1; ++x) vol.at(x, y, z) = value;
        }
    }
}

inline void add_noise_inside(Volume3D& vol, const Ellipsoid& e, double sigma, Rng& rng) {
    const auto& [cx, cy, cz] = e.center;
    const auto& [rx, ry, rz] = e.radii;
    const int z0 = std::max(0, static_cast<int>(std::ceil(cz - rz)));
    const int z1 = std::min(vol.dims.nz - 1, static_cast<int>(std::floor(cz + rz)));
    for (int z = z0; z <= z1; ++z) {
        const double qz = ((z - cz) / rz) * ((z - cz) / rz);
        if (qz > 1.0) continue;
        for (int y = std::max(0, static_cast<int>(std::ceil(cy - ry))); y <= std::min(vol.dims.ny - 1, static_cast<int>(std::floor(cy + ry))); ++y) {
            const double qy = ((y - cy) / ry) * ((y - cy) / ry);
            const double rem = 1.0 - qz - qy;
            if (rem <= 0.0) continue;
            const double rx_eff = rx * std::sqrt(rem);
            const int x0 = std::max(0, static_cast<int>(std::ceil(cx - rx_eff)));
            const int x1 = std::min(vol.dims.nx - 1, static_cast<int>(std::floor(cx + rx_eff)));
            for (int x = x0; x <= x1; ++x)
                vol.at(x, y, z) = static_cast<float>(vol.at(x, y, z) + rng.normal(0.0, sigma));
        }
    }
}

inline Ellipsoid region_ellipsoid(const BoxMask& box, double scale) {
    auto mid = [](const Interval& iv) { return (iv.lo + iv.hi) / 2.0; };
    auto half = [](const Interval& iv) { return (iv.hi - iv.lo) / 2.0; };
    return Ellipsoid{{mid(box.x), mid(box.y), mid(box.z)},
                     {half(box.x) * scale, half(box.y) * scale, half(box.z) * scale}};
}

inline Ellipsoid brain_ellipsoid(double scale) {
    return Ellipsoid{{90.5, 108.5, 90.5}, {75.0 * scale, 95.0 * scale, 75.0 * scale}};
}

inline Ellipsoid ventricle_ellipsoid(double scale) {
    return Ellipsoid{{90.5, 108.5, 90.5}, {10.0 * scale, 14.0 * scale, 10.0 * scale}};
}

}  // namespace detail

inline constexpr float kPhantomBrainIntensity = 120.0f;
inline constexpr float kPhantomRegionIntensity = 220.0f;

struct PhantomSubject {
    Volume3D vol_1mm;
    Volume3D vol_2mm;
    SubjectRecord record;
};

// Builds one synthetic subject: an ellipsoidal brain shell with the eight
// Table 1 regions as brighter sub-ellipsoids, a dark central ventricle, and
// Gaussian noise inside the brain. The 2 mm volume is the 2x block-mean of
// the 1 mm volume, mirroring what paired registrations produce.
inline PhantomSubject generate_subject(const PhantomParams& params,
                                       const std::string& subject_id = "phantom") {
    params.validate();

    PhantomSubject out;
    out.vol_1mm = Volume3D(kDims1mm, {1.0f, 1.0f, 1.0f}, 0.0f);

    const auto brain = detail::brain_ellipsoid(params.brain_scale());
    detail::fill_ellipsoid(out.vol_1mm, brain, kPhantomBrainIntensity);
    for (const RegionSpec& region : default_local_regions())
        detail::fill_ellipsoid(out.vol_1mm, detail::region_ellipsoid(*region.box, params.region_scale()),
                               kPhantomRegionIntensity);
    detail::fill_ellipsoid(out.vol_1mm, detail::ventricle_ellipsoid(params.ventricle_scale()), 0.0f);

    if (params.noise_sigma > 0.0) {
        Rng rng(hash_combine(params.seed, fnv1a64(subject_id)));
        detail::add_noise_inside(out.vol_1mm, brain, params.noise_sigma, rng);
    }

    out.vol_2mm = block_mean_downsample2(out.vol_1mm);
    out.record.subject_id = subject_id;
    out.record.age = params.age;
    out.record.gender = params.gender;
    return out;
}

struct CohortParams {
    int n = 1;
    double age_lo = kPhantomAgeMin;
    double age_hi = kPhantomAgeMax;
    std::uint64_t seed = 7;
    double noise_sigma = 4.0;
    double shrink_rate = 0.004;
    double ventricle_growth_rate = 0.006;
};

// Writes a full cohort: paired raw volumes under <out_dir>/volumes, the
// JSON-lines manifest, and the Table 1 region config with analytic box
// masks. Ages are uniform over the range, genders alternate. Deterministic
// in the seed, byte for byte.
inline DatasetManifest generate_cohort(const CohortParams& cohort, const std::string& out_dir) {
    if (cohort.n < 1) throw InvalidParams("cohort size must be >= 1");
    if (cohort.age_lo < kPhantomAgeMin || cohort.age_hi > kPhantomAgeMax || cohort.age_lo > cohort.age_hi)
        throw InvalidParams("cohort age range must lie within [19,77]");

    namespace fs = std::filesystem;
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "volumes", ec);
    if (ec) throw IoError("cannot create " + (root / "volumes").string());

    DatasetManifest manifest;
    manifest.declared_age_range = {cohort.age_lo, cohort.age_hi};

    Rng age_rng(hash_combine(cohort.seed, 0xa6e5ull));
    for (int i = 0; i < cohort.n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%04d", i + 1);

        PhantomParams params;
        params.age = age_rng.uniform(cohort.age_lo, cohort.age_hi);
        params.gender = (i % 2 == 0) ? Gender::female : Gender::male;
        params.noise_sigma = cohort.noise_sigma;
        params.shrink_rate = cohort.shrink_rate;
        params.ventricle_growth_rate = cohort.ventricle_growth_rate;
        params.seed = hash_combine(cohort.seed, static_cast<std::uint64_t>(i));

        PhantomSubject subject = generate_subject(params, name);
        const std::string rel_1mm = "volumes/" + std::string(name) + "_1mm.gvol";
        const std::string rel_2mm = "volumes/" + std::string(name) + "_2mm.gvol";
        write_volume_raw(subject.vol_1mm, (root / rel_1mm).string());
        write_volume_raw(subject.vol_2mm, (root / rel_2mm).string());

        subject.record.path_1mm = rel_1mm;
        subject.record.path_2mm = rel_2mm;
        manifest.records.push_back(subject.record);
    }

    save_manifest(manifest, (root / "manifest.jsonl").string());
    save_regions(default_local_regions(), (root / "regions.json").string());
    return manifest;
}

}  // namespace gdsm
