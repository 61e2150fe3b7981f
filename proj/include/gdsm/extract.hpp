#pragma once

#include <array>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/errors.hpp"
#include "gdsm/image.hpp"
#include "gdsm/manifest.hpp"
#include "gdsm/volume.hpp"

namespace gdsm {

inline constexpr int kPatchSize = 80;

// Inclusive slice index interval.
struct Interval {
    int lo = 0;
    int hi = 0;
    long count() const { return hi - lo + 1; }
    bool contains(int i) const { return i >= lo && i <= hi; }
    bool operator==(const Interval&) const = default;
};

// Per-plane inclusive intervals for the global stream (2 mm volumes).
struct SliceTable {
    std::array<std::optional<Interval>, 3> intervals;  // indexed by plane code

    const std::optional<Interval>& of(Plane p) const { return intervals[static_cast<int>(p)]; }
    std::optional<Interval>& of(Plane p) { return intervals[static_cast<int>(p)]; }
};

// Table 2, 2 mm column.
inline SliceTable default_slice_table() {
    SliceTable t;
    t.of(Plane::axial) = Interval{30, 49};
    t.of(Plane::coronal) = Interval{40, 69};
    t.of(Plane::sagittal) = Interval{30, 59};
    return t;
}

enum class Laterality : int { left = 0, right = 1 };

// Axis-aligned analytic mask in 1 mm voxel coordinates.
struct BoxMask {
    Interval x, y, z;
    bool operator==(const BoxMask&) const = default;
};

// One local region (one row of Table 1) with its slice intervals and mask.
// The mask is either an analytic box (phantom cohorts) or a binary volume
// loaded from mask_path.
struct RegionSpec {
    std::string name;
    int encoded_label = 0;
    Laterality laterality = Laterality::left;
    std::array<std::optional<Interval>, 3> intervals;  // indexed by plane code
    std::optional<BoxMask> box;
    std::string mask_path;
    std::shared_ptr<const Volume3D> mask;

    const std::optional<Interval>& of(Plane p) const { return intervals[static_cast<int>(p)]; }
    std::optional<Interval>& of(Plane p) { return intervals[static_cast<int>(p)]; }
};

// Table 1 with the analytic box masks the phantom generator ships. The box
// extents for plane entries Table 1 leaves blank ("-") mirror the paired
// region or sit in the frontal y range.
inline std::vector<RegionSpec> default_local_regions() {
    auto region = [](const std::string& name, int label, Laterality lat,
                     std::optional<Interval> ax, std::optional<Interval> co, std::optional<Interval> sa,
                     BoxMask box) {
        RegionSpec r;
        r.name = name;
        r.encoded_label = label;
        r.laterality = lat;
        r.of(Plane::axial) = ax;
        r.of(Plane::coronal) = co;
        r.of(Plane::sagittal) = sa;
        r.box = box;
        return r;
    };
    using I = Interval;
    return {
        region("left_hippocampus", 0, Laterality::left, I{60, 79}, I{85, 120}, I{113, 128},
               BoxMask{I{113, 128}, I{85, 120}, I{60, 79}}),
        region("right_hippocampus", 0, Laterality::right, I{60, 79}, I{85, 120}, I{60, 72},
               BoxMask{I{60, 72}, I{85, 120}, I{60, 79}}),
        region("parietal_lateral_left", 1, Laterality::left, I{66, 94}, I{80, 110}, I{100, 120},
               BoxMask{I{100, 120}, I{80, 110}, I{66, 94}}),
        region("parietal_lateral_right", 1, Laterality::right, I{66, 94}, I{80, 110}, I{60, 80},
               BoxMask{I{60, 80}, I{80, 110}, I{66, 94}}),
        region("frontal_opercular_left", 2, Laterality::left, I{70, 84}, I{135, 140}, I{125, 140},
               BoxMask{I{125, 140}, I{135, 140}, I{70, 84}}),
        region("frontal_opercular_right", 2, Laterality::right, I{70, 84}, I{135, 140}, std::nullopt,
               BoxMask{I{41, 56}, I{135, 140}, I{70, 84}}),
        region("frontal_lobe_left", 3, Laterality::left, I{60, 94}, std::nullopt, I{100, 120},
               BoxMask{I{100, 120}, I{140, 180}, I{60, 94}}),
        region("frontal_lobe_right", 3, Laterality::right, I{60, 94}, std::nullopt, I{60, 80},
               BoxMask{I{60, 80}, I{140, 180}, I{60, 94}}),
    };
}

enum class Stream : int { local = 0, global = 1 };

// One model input: a normalized 2D image plus the labels the heads consume.
struct ExtractedPatch {
    std::string subject_id;
    Stream stream = Stream::local;
    Plane plane = Plane::axial;
    int slice_index = 0;
    int encoded_label = 0;   // patch type for local, plane code for global
    int region_ordinal = -1; // row index in the region config; -1 for global
    Gender gender = Gender::female;
    double target_age = 0.0;
    bool augmented = false;
    std::uint64_t aug_seed = 0;
    Image2D image;
};

// ---------------------------------------------------------------------------
// Config-derived patch counts. Every downstream width (matrix columns,
// archive index checks) comes from these sums, never from hard-coded totals.
// ---------------------------------------------------------------------------

struct PlaneCounts {
    long axial = 0;
    long coronal = 0;
    long sagittal = 0;

    long total() const { return axial + coronal + sagittal; }
    long of(Plane p) const {
        switch (p) {
            case Plane::axial: return axial;
            case Plane::coronal: return coronal;
            default: return sagittal;
        }
    }
    long& of(Plane p) {
        switch (p) {
            case Plane::axial: return axial;
            case Plane::coronal: return coronal;
            default: return sagittal;
        }
    }
};

inline PlaneCounts patch_count(const SliceTable& table) {
    PlaneCounts c;
    for (Plane p : kAllPlanes)
        if (table.of(p)) c.of(p) += table.of(p)->count();
    return c;
}

inline PlaneCounts patch_count(const std::vector<RegionSpec>& regions) {
    PlaneCounts c;
    for (const auto& r : regions)
        for (Plane p : kAllPlanes)
            if (r.of(p)) c.of(p) += r.of(p)->count();
    return c;
}

struct ExtractStats {
    long emitted = 0;
    long skipped_empty_mask = 0;
};

namespace detail {

inline void check_interval(const Interval& iv, int axis_len, Plane plane, const std::string& what) {
    if (iv.lo < 0 || iv.hi >= axis_len || iv.lo > iv.hi)
        throw IntervalOutOfBounds(what + ": " + plane_name(plane) + " interval [" +
                                  std::to_string(iv.lo) + "," + std::to_string(iv.hi) +
                                  "] outside axis of length " + std::to_string(axis_len));
}

// Per-slice mask footprint as row/col bounds on the slice image, plus the
// mask raster when it is volume-based. Returns false for an empty footprint.
struct MaskFootprint {
    int r0 = 0, r1 = -1, c0 = 0, c1 = -1;
    std::optional<Image2D> raster;  // absent for box masks (rectangular)
    bool empty() const { return r1 < r0 || c1 < c0; }
};

inline MaskFootprint mask_footprint(const RegionSpec& region, Plane plane, int slice,
                                    const Dims& dims) {
    MaskFootprint fp;
    if (region.mask) {
        Image2D m = extract_slice(*region.mask, plane, slice);
        fp.r0 = m.rows;
        fp.c0 = m.cols;
        fp.r1 = -1;
        fp.c1 = -1;
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c)
                if (m.at(r, c) > 0.5f) {
                    fp.r0 = std::min(fp.r0, r);
                    fp.r1 = std::max(fp.r1, r);
                    fp.c0 = std::min(fp.c0, c);
                    fp.c1 = std::max(fp.c1, c);
                }
        fp.raster = std::move(m);
        return fp;
    }
    if (!region.box) return fp;
    const BoxMask& b = *region.box;
    // Image axes per plane: axial (x,y), coronal (x,z), sagittal (y,z).
    Interval along, row_iv, col_iv;
    int row_len, col_len;
    switch (plane) {
        case Plane::axial: along = b.z; row_iv = b.x; col_iv = b.y; row_len = dims.nx; col_len = dims.ny; break;
        case Plane::coronal: along = b.y; row_iv = b.x; col_iv = b.z; row_len = dims.nx; col_len = dims.nz; break;
        default: along = b.x; row_iv = b.y; col_iv = b.z; row_len = dims.ny; col_len = dims.nz; break;
    }
    if (!along.contains(slice)) return fp;
    fp.r0 = std::max(row_iv.lo, 0);
    fp.r1 = std::min(row_iv.hi, row_len - 1);
    fp.c0 = std::max(col_iv.lo, 0);
    fp.c1 = std::min(col_iv.hi, col_len - 1);
    return fp;
}

}  // namespace detail

// Global stream: every configured 2 mm slice, normalized, at native shape.
// Patch order is axial, coronal, sagittal, ascending slice index.
inline std::vector<ExtractedPatch> extract_global_slices(const Volume3D& volume_2mm,
                                                         const SliceTable& table,
                                                         const SubjectRecord& record) {
    if (!(volume_2mm.dims == kDims2mm))
        throw DimsMismatch("extract_global_slices expects 2 mm dims " + kDims2mm.str() + ", got " +
                           volume_2mm.dims.str());
    for (Plane p : kAllPlanes)
        if (table.of(p)) detail::check_interval(*table.of(p), axis_length(volume_2mm.dims, p), p, "slice table");

    std::vector<ExtractedPatch> out;
    out.reserve(static_cast<std::size_t>(patch_count(table).total()));
    for (Plane p : kAllPlanes) {
        if (!table.of(p)) continue;
        const Interval iv = *table.of(p);
        for (int s = iv.lo; s <= iv.hi; ++s) {
            ExtractedPatch patch;
            patch.subject_id = record.subject_id;
            patch.stream = Stream::global;
            patch.plane = p;
            patch.slice_index = s;
            patch.encoded_label = static_cast<int>(p);
            patch.region_ordinal = -1;
            patch.gender = record.gender;
            patch.target_age = record.age;
            patch.image = normalize_patch(extract_slice(volume_2mm, p, s));
            out.push_back(std::move(patch));
        }
    }
    return out;
}

// Local stream: for every region/plane/slice in the config, mask the slice,
// crop to the mask's per-slice bounding box, resize to 80x80 (bilinear,
// corner-aligned) and normalize. A mask that misses the slice entirely is
// skipped and counted in stats rather than treated as fatal.
inline std::vector<ExtractedPatch> extract_local_patches(const Volume3D& volume_1mm,
                                                         const std::vector<RegionSpec>& regions,
                                                         const SubjectRecord& record,
                                                         ExtractStats* stats = nullptr) {
    if (!(volume_1mm.dims == kDims1mm))
        throw DimsMismatch("extract_local_patches expects 1 mm dims " + kDims1mm.str() + ", got " +
                           volume_1mm.dims.str());
    for (const auto& region : regions) {
        if (region.mask && !(region.mask->dims == volume_1mm.dims))
            throw DimsMismatch("mask for region " + region.name + " has dims " +
                               region.mask->dims.str() + ", expected " + volume_1mm.dims.str());
        for (Plane p : kAllPlanes)
            if (region.of(p))
                detail::check_interval(*region.of(p), axis_length(volume_1mm.dims, p), p,
                                       "region " + region.name);
    }

    std::vector<ExtractedPatch> out;
    out.reserve(static_cast<std::size_t>(patch_count(regions).total()));
    for (Plane p : kAllPlanes) {
        for (std::size_t ri = 0; ri < regions.size(); ++ri) {
            const RegionSpec& region = regions[ri];
            if (!region.of(p)) continue;
            const Interval iv = *region.of(p);
            for (int s = iv.lo; s <= iv.hi; ++s) {
                const auto fp = detail::mask_footprint(region, p, s, volume_1mm.dims);
                if (fp.empty()) {
                    if (stats) ++stats->skipped_empty_mask;
                    continue;
                }
                Image2D slice = extract_slice(volume_1mm, p, s);
                Image2D crop(fp.r1 - fp.r0 + 1, fp.c1 - fp.c0 + 1);
                for (int r = fp.r0; r <= fp.r1; ++r)
                    for (int c = fp.c0; c <= fp.c1; ++c) {
                        float value = slice.at(r, c);
                        if (fp.raster && fp.raster->at(r, c) <= 0.5f) value = 0.0f;
                        crop.at(r - fp.r0, c - fp.c0) = value;
                    }

                ExtractedPatch patch;
                patch.subject_id = record.subject_id;
                patch.stream = Stream::local;
                patch.plane = p;
                patch.slice_index = s;
                patch.encoded_label = region.encoded_label;
                patch.region_ordinal = static_cast<int>(ri);
                patch.gender = record.gender;
                patch.target_age = record.age;
                patch.image = normalize_patch(resize_bilinear(crop, kPatchSize, kPatchSize));
                out.push_back(std::move(patch));
                if (stats) ++stats->emitted;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Region config JSON, one entry per Table 1 row. A plane key set to null (or
// absent) yields no patches for that plane; the mask is either a file path
// or an analytic box.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json interval_json(const std::optional<Interval>& iv) {
    if (!iv) return nullptr;
    return nlohmann::json::array({iv->lo, iv->hi});
}

inline std::optional<Interval> interval_from_json(const nlohmann::json& j, const std::string& what) {
    if (j.is_null()) return std::nullopt;
    if (!j.is_array() || j.size() != 2) throw FormatError(what + ": interval must be [lo, hi] or null");
    return Interval{j[0].get<int>(), j[1].get<int>()};
}

}  // namespace detail

inline nlohmann::json regions_to_json(const std::vector<RegionSpec>& regions) {
    nlohmann::json out;
    out["regions"] = nlohmann::json::array();
    for (const auto& r : regions) {
        nlohmann::json j;
        j["name"] = r.name;
        j["encoded_label"] = r.encoded_label;
        j["laterality"] = r.laterality == Laterality::left ? "left" : "right";
        j["axial"] = detail::interval_json(r.of(Plane::axial));
        j["coronal"] = detail::interval_json(r.of(Plane::coronal));
        j["sagittal"] = detail::interval_json(r.of(Plane::sagittal));
        if (r.box) {
            j["box"] = {{"x", {r.box->x.lo, r.box->x.hi}},
                        {"y", {r.box->y.lo, r.box->y.hi}},
                        {"z", {r.box->z.lo, r.box->z.hi}}};
        }
        if (!r.mask_path.empty()) j["mask"] = r.mask_path;
        out["regions"].push_back(std::move(j));
    }
    return out;
}

inline std::vector<RegionSpec> regions_from_json(const nlohmann::json& doc) {
    if (!doc.contains("regions") || !doc["regions"].is_array())
        throw FormatError("region config: missing \"regions\" array");
    std::vector<RegionSpec> out;
    for (const auto& j : doc["regions"]) {
        RegionSpec r;
        r.name = j.at("name").get<std::string>();
        r.encoded_label = j.at("encoded_label").get<int>();
        if (r.encoded_label < 0 || r.encoded_label > 3)
            throw FormatError("region " + r.name + ": encoded_label must be in 0..3");
        const std::string lat = j.at("laterality").get<std::string>();
        if (lat != "left" && lat != "right")
            throw FormatError("region " + r.name + ": laterality must be left or right");
        r.laterality = lat == "left" ? Laterality::left : Laterality::right;
        r.of(Plane::axial) = detail::interval_from_json(j.value("axial", nlohmann::json()), r.name);
        r.of(Plane::coronal) = detail::interval_from_json(j.value("coronal", nlohmann::json()), r.name);
        r.of(Plane::sagittal) = detail::interval_from_json(j.value("sagittal", nlohmann::json()), r.name);
        if (j.contains("box") && !j["box"].is_null()) {
            const auto& b = j["box"];
            r.box = BoxMask{Interval{b.at("x")[0].get<int>(), b.at("x")[1].get<int>()},
                            Interval{b.at("y")[0].get<int>(), b.at("y")[1].get<int>()},
                            Interval{b.at("z")[0].get<int>(), b.at("z")[1].get<int>()}};
        }
        if (j.contains("mask") && !j["mask"].is_null()) r.mask_path = j["mask"].get<std::string>();
        if (!r.box && r.mask_path.empty())
            throw FormatError("region " + r.name + ": needs a mask file or an analytic box");
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_regions(const std::vector<RegionSpec>& regions, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write region config " + path);
    out << regions_to_json(regions).dump(2) << "\n";
}

inline std::vector<RegionSpec> load_regions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("no such region config: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("region config " + path + ": " + e.what());
    }
    return regions_from_json(doc);
}

}  // namespace gdsm
