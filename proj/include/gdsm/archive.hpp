#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/binio.hpp"
#include "gdsm/errors.hpp"
#include "gdsm/extract.hpp"

namespace gdsm {

// ---------------------------------------------------------------------------
// Patch archive: a directory with one binary file per subject plus an
// index.json. Each record is
//   u8 stream, u8 plane, i32 slice_index, i32 encoded_label,
//   i32 region_ordinal, u8 gender, u8 augmented, u64 aug_seed, f32 age,
//   u32 rows, u32 cols, f32 payload[rows*cols]
// in little-endian order after the 8-byte magic and a u32 record count.
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kPatchMagic[8] = {'G', 'D', 'S', 'M', 'P', 'A', 'T', '1'};
}

inline std::string patch_file_name(const std::string& subject_id) { return subject_id + ".gpa"; }

inline void save_patches(const std::vector<ExtractedPatch>& patches, const std::string& path) {
    std::string out;
    out.append(detail::kPatchMagic, sizeof(detail::kPatchMagic));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(patches.size()));
    for (const auto& p : patches) {
        out.push_back(static_cast<char>(p.stream));
        out.push_back(static_cast<char>(p.plane));
        detail::put_le<std::int32_t>(out, p.slice_index);
        detail::put_le<std::int32_t>(out, p.encoded_label);
        detail::put_le<std::int32_t>(out, p.region_ordinal);
        out.push_back(static_cast<char>(p.gender));
        out.push_back(p.augmented ? 1 : 0);
        detail::put_le<std::uint64_t>(out, p.aug_seed);
        detail::put_le<float>(out, static_cast<float>(p.target_age));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.image.rows));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.image.cols));
        const char* data = reinterpret_cast<const char*>(p.image.v.data());
        out.append(data, p.image.v.size() * sizeof(float));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write patch file " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for patch file " + path);
}

inline std::vector<ExtractedPatch> load_patches(const std::string& path, const std::string& subject_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileMissing("no such patch file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kPatchMagic, 8) != 0)
        throw FormatError("not a GDSM patch file: " + path);
    const std::uint32_t count = detail::get_le<std::uint32_t>(bytes.data() + 8);
    std::size_t off = 12;
    auto need = [&](std::size_t n) {
        if (off + n > bytes.size()) throw FormatError("truncated patch file: " + path);
    };

    std::vector<ExtractedPatch> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        need(2 + 4 + 4 + 4 + 2 + 8 + 4 + 4 + 4);
        ExtractedPatch p;
        p.subject_id = subject_id;
        p.stream = static_cast<Stream>(bytes[off]);
        p.plane = static_cast<Plane>(bytes[off + 1]);
        off += 2;
        p.slice_index = detail::get_le<std::int32_t>(bytes.data() + off);
        p.encoded_label = detail::get_le<std::int32_t>(bytes.data() + off + 4);
        p.region_ordinal = detail::get_le<std::int32_t>(bytes.data() + off + 8);
        off += 12;
        p.gender = static_cast<Gender>(bytes[off]);
        p.augmented = bytes[off + 1] != 0;
        off += 2;
        p.aug_seed = detail::get_le<std::uint64_t>(bytes.data() + off);
        off += 8;
        p.target_age = detail::get_le<float>(bytes.data() + off);
        off += 4;
        const std::uint32_t rows = detail::get_le<std::uint32_t>(bytes.data() + off);
        const std::uint32_t cols = detail::get_le<std::uint32_t>(bytes.data() + off + 4);
        off += 8;
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        need(n * sizeof(float));
        p.image = Image2D(static_cast<int>(rows), static_cast<int>(cols));
        std::memcpy(p.image.v.data(), bytes.data() + off, n * sizeof(float));
        off += n * sizeof(float);
        out.push_back(std::move(p));
    }
    return out;
}

// Per-subject bookkeeping carried by index.json.
struct SubjectIndexEntry {
    std::string file;
    PlaneCounts local;
    PlaneCounts global;
    long augmented = 0;
};

struct ArchiveIndex {
    std::string config_hash;
    std::string split;                                  // "train" or "val"
    std::vector<std::string> subject_order;             // manifest order
    std::map<std::string, SubjectIndexEntry> subjects;  // keyed by subject_id
};

inline void save_archive_index(const ArchiveIndex& index, const std::string& dir) {
    nlohmann::json j;
    j["config_hash"] = index.config_hash;
    j["split"] = index.split;
    j["subject_order"] = index.subject_order;
    nlohmann::json subjects = nlohmann::json::object();
    for (const auto& [id, e] : index.subjects) {
        subjects[id] = {{"file", e.file},
                        {"local", {{"axial", e.local.axial}, {"coronal", e.local.coronal}, {"sagittal", e.local.sagittal}}},
                        {"global", {{"axial", e.global.axial}, {"coronal", e.global.coronal}, {"sagittal", e.global.sagittal}}},
                        {"augmented", e.augmented}};
    }
    j["subjects"] = std::move(subjects);
    std::ofstream out(std::filesystem::path(dir) / "index.json", std::ios::trunc);
    if (!out) throw IoError("cannot write archive index in " + dir);
    out << j.dump(2) << "\n";
}

inline ArchiveIndex load_archive_index(const std::string& dir) {
    const auto path = std::filesystem::path(dir) / "index.json";
    std::ifstream in(path);
    if (!in) throw FileMissing("no archive index: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("archive index " + path.string() + ": " + e.what());
    }
    ArchiveIndex index;
    index.config_hash = j.value("config_hash", "");
    index.split = j.value("split", "");
    index.subject_order = j.value("subject_order", std::vector<std::string>{});
    for (const auto& [id, e] : j.at("subjects").items()) {
        SubjectIndexEntry entry;
        entry.file = e.at("file").get<std::string>();
        entry.local = {e["local"]["axial"].get<long>(), e["local"]["coronal"].get<long>(),
                       e["local"]["sagittal"].get<long>()};
        entry.global = {e["global"]["axial"].get<long>(), e["global"]["coronal"].get<long>(),
                        e["global"]["sagittal"].get<long>()};
        entry.augmented = e.value("augmented", 0L);
        index.subjects[id] = std::move(entry);
    }
    return index;
}

}  // namespace gdsm
