#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/errors.hpp"
#include "gdsm/rng.hpp"

namespace gdsm {

enum class Gender : int { female = 0, male = 1 };

struct SubjectRecord {
    std::string subject_id;
    double age = 0.0;  // years
    Gender gender = Gender::female;
    std::string path_1mm;
    std::string path_2mm;
};

struct DatasetManifest {
    std::vector<SubjectRecord> records;
    std::pair<double, double> declared_age_range{0.0, 0.0};

    std::size_t size() const { return records.size(); }

    void validate() const {
        std::unordered_set<std::string> ids;
        for (const auto& r : records) {
            if (!ids.insert(r.subject_id).second)
                throw FormatError("duplicate subject_id in manifest: " + r.subject_id);
            if (!std::isfinite(r.age) || r.age <= 0.0)
                throw FormatError("invalid age for subject " + r.subject_id);
            if (r.age < declared_age_range.first || r.age > declared_age_range.second)
                throw FormatError("age " + std::to_string(r.age) + " of subject " + r.subject_id +
                                  " outside declared range");
        }
    }
};

// ---------------------------------------------------------------------------
// Manifest file: UTF-8 JSON lines. First line is a header carrying
// declared_age_range; every following line is one subject record with
// gender encoded "F"/"M".
// ---------------------------------------------------------------------------

inline void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path);
    nlohmann::json header;
    header["declared_age_range"] = {manifest.declared_age_range.first, manifest.declared_age_range.second};
    out << header.dump() << "\n";
    for (const auto& r : manifest.records) {
        nlohmann::json line;
        line["subject_id"] = r.subject_id;
        line["age"] = r.age;
        line["gender"] = r.gender == Gender::female ? "F" : "M";
        line["path_1mm"] = r.path_1mm;
        line["path_2mm"] = r.path_2mm;
        out << line.dump() << "\n";
    }
    if (!out) throw IoError("write failed for manifest " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("no such manifest: " + path);
    DatasetManifest manifest;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest " + path + ": " + e.what());
        }
        if (!have_header) {
            if (!j.contains("declared_age_range") || !j["declared_age_range"].is_array() ||
                j["declared_age_range"].size() != 2)
                throw FormatError("manifest " + path + " missing declared_age_range header");
            manifest.declared_age_range = {j["declared_age_range"][0].get<double>(),
                                           j["declared_age_range"][1].get<double>()};
            have_header = true;
            continue;
        }
        SubjectRecord r;
        try {
            r.subject_id = j.at("subject_id").get<std::string>();
            r.age = j.at("age").get<double>();
            const std::string g = j.at("gender").get<std::string>();
            if (g == "F")
                r.gender = Gender::female;
            else if (g == "M")
                r.gender = Gender::male;
            else
                throw FormatError("manifest " + path + ": gender must be \"F\" or \"M\"");
            r.path_1mm = j.at("path_1mm").get<std::string>();
            r.path_2mm = j.at("path_2mm").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest " + path + ": " + e.what());
        }
        manifest.records.push_back(std::move(r));
    }
    if (!have_header) throw FormatError("manifest " + path + " is empty");
    manifest.validate();
    return manifest;
}

// ---------------------------------------------------------------------------
// Stratified split: equal-width age bins over the declared range; within each
// bin a seeded shuffle sends round(n * (1 - train_frac)) records to
// validation (round half up). Record order inside each output follows the
// input manifest, so re-running with the same seed is byte-identical.
// ---------------------------------------------------------------------------

inline std::pair<DatasetManifest, DatasetManifest> stratified_split(const DatasetManifest& manifest,
                                                                    int n_bins, double train_frac,
                                                                    std::uint64_t seed) {
    if (manifest.records.empty()) throw EmptyManifest("stratified_split: manifest has no records");
    if (n_bins < 1) throw InvalidParams("stratified_split: n_bins must be >= 1");
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw InvalidParams("stratified_split: train_frac must be in (0,1)");

    const double lo = manifest.declared_age_range.first;
    const double hi = manifest.declared_age_range.second;
    const double width = hi > lo ? (hi - lo) / n_bins : 1.0;

    std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(n_bins));
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        int b = hi > lo ? static_cast<int>((manifest.records[i].age - lo) / width) : 0;
        b = std::clamp(b, 0, n_bins - 1);
        bins[static_cast<std::size_t>(b)].push_back(i);
    }

    std::vector<char> to_validation(manifest.records.size(), 0);
    for (std::size_t b = 0; b < bins.size(); ++b) {
        auto& members = bins[b];
        if (members.empty()) continue;
        const std::size_t n_val = static_cast<std::size_t>(
            std::floor(static_cast<double>(members.size()) * (1.0 - train_frac) + 0.5));
        Rng rng(hash_combine(seed, 0x5b1eull + b));
        rng.shuffle(members);
        for (std::size_t k = 0; k < n_val && k < members.size(); ++k) to_validation[members[k]] = 1;
    }

    DatasetManifest train, val;
    train.declared_age_range = val.declared_age_range = manifest.declared_age_range;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        (to_validation[i] ? val : train).records.push_back(manifest.records[i]);
    }
    return {std::move(train), std::move(val)};
}

}  // namespace gdsm
