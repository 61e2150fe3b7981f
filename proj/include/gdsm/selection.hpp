#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/archive.hpp"
#include "gdsm/binio.hpp"
#include "gdsm/errors.hpp"
#include "gdsm/extract.hpp"
#include "gdsm/nn/train.hpp"

namespace gdsm {

enum class SplitTag : int { unspecified = 0, train = 1, validation = 2 };

inline const char* split_tag_name(SplitTag s) {
    switch (s) {
        case SplitTag::train: return "train";
        case SplitTag::validation: return "val";
        default: return "unspecified";
    }
}

// Identity of one predictor column.
struct PredictorMeta {
    Stream stream = Stream::local;
    Plane plane = Plane::axial;
    int slice_index = 0;
    int encoded_label = 0;
    int region_ordinal = -1;  // -1 for global columns
    bool corrected = false;   // set on age-correction outputs

    bool operator==(const PredictorMeta&) const = default;
};

// Subjects x predictors matrix of per-slice/per-patch age predictions.
// Columns follow the canonical order: local axial, local coronal, local
// sagittal, then global axial/coronal/sagittal, ascending slice index
// (region order breaks ties within a local plane).
struct PredictionMatrix {
    std::vector<std::string> subject_ids;
    std::vector<double> targets;        // true age per row
    std::vector<PredictorMeta> columns;
    std::vector<double> values;         // row-major
    SplitTag split = SplitTag::unspecified;
    std::string config_hash;

    std::size_t rows() const { return subject_ids.size(); }
    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows());
        for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, c);
        return out;
    }
};

// Greedy pick: column indices ordered by descending training-set Pearson
// correlation. fit_split records which rows produced it; everything
// downstream refuses a selection that was not fit on training rows.
struct SelectionResult {
    std::vector<std::size_t> indices;
    std::vector<double> correlations;
    SplitTag fit_split = SplitTag::unspecified;
};

// ---------------------------------------------------------------------------
// Pearson per column and top-C selection.
// ---------------------------------------------------------------------------

// Sample Pearson r of each column against the targets. Zero-variance columns
// (or non-finite outcomes) are undefined and reported as nullopt so constant
// predictors can never be selected.
inline std::vector<std::optional<double>> pearson_per_column(const PredictionMatrix& m) {
    if (m.rows() < 2) throw TooFewRows("pearson_per_column needs n >= 2 rows");
    const std::size_t n = m.rows();
    double tmean = 0.0;
    for (double t : m.targets) tmean += t;
    tmean /= static_cast<double>(n);
    double tvar = 0.0;
    for (double t : m.targets) tvar += (t - tmean) * (t - tmean);

    std::vector<std::optional<double>> out(m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double cmean = 0.0;
        for (std::size_t r = 0; r < n; ++r) cmean += m.at(r, c);
        cmean /= static_cast<double>(n);
        double num = 0.0, cvar = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = m.at(r, c) - cmean;
            num += d * (m.targets[r] - tmean);
            cvar += d * d;
        }
        if (cvar == 0.0 || tvar == 0.0) {
            out[c] = std::nullopt;
            continue;
        }
        const double r = num / std::sqrt(cvar * tvar);
        out[c] = std::isfinite(r) ? std::optional<double>(r) : std::nullopt;
    }
    return out;
}

// Top-c columns by raw r (not |r|), descending; ties broken by ascending
// column index; undefined-r columns excluded.
inline SelectionResult select_top(const PredictionMatrix& m, std::size_t c) {
    if (c < 1) throw InvalidParams("select_top needs c >= 1");
    const auto rs = pearson_per_column(m);
    std::vector<std::size_t> defined;
    for (std::size_t i = 0; i < rs.size(); ++i)
        if (rs[i]) defined.push_back(i);
    if (defined.empty()) throw NoDefinedColumns("no column has a defined correlation");

    std::stable_sort(defined.begin(), defined.end(), [&](std::size_t a, std::size_t b) {
        if (*rs[a] != *rs[b]) return *rs[a] > *rs[b];
        return a < b;
    });
    if (defined.size() > c) defined.resize(c);

    SelectionResult sel;
    sel.fit_split = m.split;
    for (std::size_t i : defined) {
        sel.indices.push_back(i);
        sel.correlations.push_back(*rs[i]);
    }
    return sel;
}

// Pipeline entry point for the greedy stage: hard-fails unless the matrix
// holds training rows, so validation targets can never leak into selection.
inline SelectionResult fit_selection(const PredictionMatrix& m, std::size_t c) {
    if (m.split != SplitTag::train)
        throw SelectionLeakage("selection must be fit on training rows, got split '" +
                               std::string(split_tag_name(m.split)) + "'");
    return select_top(m, c);
}

// Age vector for every row: the selected columns' predictions, in selection
// order. Applying train-fit indices to validation rows is the intended use.
inline std::vector<std::vector<double>> age_vectors(const PredictionMatrix& m,
                                                    const SelectionResult& sel) {
    if (sel.fit_split != SplitTag::train)
        throw SelectionLeakage("age vectors require a selection fit on training rows");
    std::vector<std::vector<double>> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r].reserve(sel.indices.size());
        for (std::size_t c : sel.indices) out[r].push_back(m.at(r, c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix assembly from a trained bundle and a clean patch archive.
// ---------------------------------------------------------------------------

// The four trained stream models (three local pathways, one global).
template <typename S>
struct GdsmBundle {
    nn::PathwayModel<S> local_axial;
    nn::PathwayModel<S> local_coronal;
    nn::PathwayModel<S> local_sagittal;
    nn::PathwayModel<S> global;

    const nn::PathwayModel<S>& local_for(Plane p) const {
        switch (p) {
            case Plane::axial: return local_axial;
            case Plane::coronal: return local_coronal;
            default: return local_sagittal;
        }
    }
};

// Canonical column list derived from the configuration.
inline std::vector<PredictorMeta> canonical_columns(const std::vector<RegionSpec>& regions,
                                                    const SliceTable& table) {
    std::vector<PredictorMeta> cols;
    for (Plane p : kAllPlanes) {
        std::vector<PredictorMeta> plane_cols;
        for (std::size_t ri = 0; ri < regions.size(); ++ri) {
            const auto& iv = regions[ri].of(p);
            if (!iv) continue;
            for (int s = iv->lo; s <= iv->hi; ++s)
                plane_cols.push_back({Stream::local, p, s, regions[ri].encoded_label,
                                      static_cast<int>(ri), false});
        }
        std::stable_sort(plane_cols.begin(), plane_cols.end(), [](const auto& a, const auto& b) {
            if (a.slice_index != b.slice_index) return a.slice_index < b.slice_index;
            return a.region_ordinal < b.region_ordinal;
        });
        cols.insert(cols.end(), plane_cols.begin(), plane_cols.end());
    }
    for (Plane p : kAllPlanes) {
        const auto& iv = table.of(p);
        if (!iv) continue;
        for (int s = iv->lo; s <= iv->hi; ++s)
            cols.push_back({Stream::global, p, s, static_cast<int>(p), -1, false});
    }
    return cols;
}

// Patches of one subject, keyed for column lookup.
struct SubjectPatchSet {
    std::string subject_id;
    double age = 0.0;
    std::map<std::tuple<int, int, int, int>, const ExtractedPatch*> by_key;  // (stream, plane, slice, region)

    static std::tuple<int, int, int, int> key(const PredictorMeta& c) {
        return {static_cast<int>(c.stream), static_cast<int>(c.plane), c.slice_index, c.region_ordinal};
    }

    void add(const ExtractedPatch& p) {
        if (p.augmented) return;  // prediction matrices use clean patches only
        by_key[{static_cast<int>(p.stream), static_cast<int>(p.plane), p.slice_index, p.region_ordinal}] = &p;
    }
};

// One row per subject, one column per configured predictor, in canonical
// order regardless of patch file order. Every subject must supply the full
// clean patch set.
template <typename S>
PredictionMatrix assemble_matrix(const GdsmBundle<S>& bundle,
                                 const std::vector<SubjectPatchSet>& subjects,
                                 const std::vector<PredictorMeta>& columns, SplitTag split,
                                 const std::string& config_hash = "", int threads = 0) {
    PredictionMatrix m;
    m.columns = columns;
    m.split = split;
    m.config_hash = config_hash;
    m.values.assign(subjects.size() * columns.size(), 0.0);
    m.subject_ids.reserve(subjects.size());
    m.targets.reserve(subjects.size());
    for (const auto& s : subjects) {
        m.subject_ids.push_back(s.subject_id);
        m.targets.push_back(s.age);
        for (const auto& c : columns)
            if (!s.by_key.count(SubjectPatchSet::key(c)))
                throw MissingPatches("subject " + s.subject_id + " is missing the patch for " +
                                     plane_name(c.plane) + " slice " + std::to_string(c.slice_index) +
                                     (c.stream == Stream::local
                                          ? " region " + std::to_string(c.region_ordinal)
                                          : std::string(" (global)")));
    }

    nn::parallel_for(subjects.size(), threads, [&](std::size_t r) {
        const auto& subject = subjects[r];
        for (std::size_t c = 0; c < columns.size(); ++c) {
            const ExtractedPatch& patch = *subject.by_key.at(SubjectPatchSet::key(columns[c]));
            const auto& model = columns[c].stream == Stream::local
                                    ? bundle.local_for(columns[c].plane)
                                    : bundle.global;
            m.at(r, c) = nn::predict(model, patch);
        }
    });
    for (double v : m.values)
        if (!std::isfinite(v)) throw NonFinitePrediction("assemble_matrix produced a non-finite value");
    return m;
}

// Age-correction pass: for every subject, re-predict each configured global
// slice with the subject's C1 age vector as the aux input. Output columns
// follow the global stream order.
template <typename S>
PredictionMatrix run_correction(const nn::PathwayModel<S>& correction_model,
                                const std::vector<SubjectPatchSet>& subjects,
                                const std::vector<PredictorMeta>& global_columns,
                                const std::vector<std::vector<double>>& subject_age_vectors,
                                const SelectionResult& selection, SplitTag split,
                                const std::string& config_hash = "", int threads = 0) {
    if (selection.fit_split != SplitTag::train)
        throw SelectionLeakage("run_correction requires a selection fit on training rows");
    if (subject_age_vectors.size() != subjects.size())
        throw LengthMismatch("one age vector per subject required");

    PredictionMatrix m;
    m.split = split;
    m.config_hash = config_hash;
    m.columns = global_columns;
    for (auto& c : m.columns) c.corrected = true;
    m.values.assign(subjects.size() * m.columns.size(), 0.0);
    for (const auto& s : subjects) {
        m.subject_ids.push_back(s.subject_id);
        m.targets.push_back(s.age);
    }

    for (const auto& subject : subjects)
        for (const auto& column : global_columns)
            if (!subject.by_key.count(SubjectPatchSet::key(column)))
                throw MissingPatches("subject " + subject.subject_id + " lacks a global patch");

    nn::parallel_for(subjects.size(), threads, [&](std::size_t r) {
        const auto& subject = subjects[r];
        for (std::size_t c = 0; c < global_columns.size(); ++c) {
            const ExtractedPatch& patch = *subject.by_key.at(SubjectPatchSet::key(global_columns[c]));
            m.at(r, c) = nn::predict(correction_model, patch, subject_age_vectors[r]);
        }
    });
    for (double v : m.values)
        if (!std::isfinite(v)) throw NonFinitePrediction("run_correction produced a non-finite value");
    return m;
}

// ---------------------------------------------------------------------------
// Serialization: matrices as JSON header + float64 payload (column-major, as
// advertised in the header); selections as plain JSON.
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kMatrixMagic[8] = {'G', 'D', 'S', 'M', 'P', 'M', 'X', '1'};
}

inline nlohmann::json predictor_meta_json(const PredictorMeta& c) {
    return {{"stream", c.stream == Stream::local ? "local" : "global"},
            {"plane", plane_name(c.plane)},
            {"slice_index", c.slice_index},
            {"encoded_label", c.encoded_label},
            {"region_ordinal", c.region_ordinal},
            {"corrected", c.corrected}};
}

inline PredictorMeta predictor_meta_from_json(const nlohmann::json& j) {
    PredictorMeta c;
    c.stream = j.at("stream").get<std::string>() == "local" ? Stream::local : Stream::global;
    const std::string p = j.at("plane").get<std::string>();
    c.plane = p == "axial" ? Plane::axial : (p == "coronal" ? Plane::coronal : Plane::sagittal);
    c.slice_index = j.at("slice_index").get<int>();
    c.encoded_label = j.at("encoded_label").get<int>();
    c.region_ordinal = j.at("region_ordinal").get<int>();
    c.corrected = j.value("corrected", false);
    return c;
}

inline void save_matrix(const PredictionMatrix& m, const std::string& path) {
    nlohmann::json header;
    header["subject_ids"] = m.subject_ids;
    header["targets"] = m.targets;
    header["split"] = split_tag_name(m.split);
    header["config_hash"] = m.config_hash;
    header["layout"] = "column-major";
    header["columns"] = nlohmann::json::array();
    for (const auto& c : m.columns) header["columns"].push_back(predictor_meta_json(c));
    const std::string header_str = header.dump();

    std::string out;
    out.append(detail::kMatrixMagic, sizeof(detail::kMatrixMagic));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_str.size()));
    out += header_str;
    for (std::size_t c = 0; c < m.cols(); ++c)
        for (std::size_t r = 0; r < m.rows(); ++r) detail::put_le<double>(out, m.at(r, c));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write matrix " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for matrix " + path);
}

inline PredictionMatrix load_matrix(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kMatrixMagic, 8) != 0)
        throw FormatError("not a GDSM matrix file: " + path);
    const std::uint32_t header_len = detail::get_le<std::uint32_t>(bytes.data() + 8);
    if (bytes.size() < 12 + header_len) throw FormatError("truncated matrix header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("matrix header " + path + ": " + e.what());
    }

    PredictionMatrix m;
    m.subject_ids = header.at("subject_ids").get<std::vector<std::string>>();
    m.targets = header.at("targets").get<std::vector<double>>();
    m.config_hash = header.value("config_hash", "");
    const std::string split = header.value("split", "unspecified");
    m.split = split == "train" ? SplitTag::train
                               : (split == "val" ? SplitTag::validation : SplitTag::unspecified);
    for (const auto& j : header.at("columns")) m.columns.push_back(predictor_meta_from_json(j));

    const std::size_t n = m.rows() * m.cols();
    if (bytes.size() != 12 + header_len + n * 8) throw FormatError("matrix payload size mismatch: " + path);
    m.values.assign(n, 0.0);
    const unsigned char* p = bytes.data() + 12 + header_len;
    for (std::size_t c = 0; c < m.cols(); ++c)
        for (std::size_t r = 0; r < m.rows(); ++r, p += 8) m.at(r, c) = detail::get_le<double>(p);
    return m;
}

inline void save_selection(const SelectionResult& sel, const std::string& path) {
    nlohmann::json j;
    j["fit_split"] = split_tag_name(sel.fit_split);
    j["indices"] = sel.indices;
    j["correlations"] = sel.correlations;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write selection " + path);
    out << j.dump(2) << "\n";
}

inline SelectionResult load_selection(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("no selection file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("selection " + path + ": " + e.what());
    }
    SelectionResult sel;
    const std::string split = j.value("fit_split", "unspecified");
    sel.fit_split = split == "train" ? SplitTag::train
                                     : (split == "val" ? SplitTag::validation : SplitTag::unspecified);
    sel.indices = j.at("indices").get<std::vector<std::size_t>>();
    sel.correlations = j.at("correlations").get<std::vector<double>>();
    return sel;
}

}  // namespace gdsm
