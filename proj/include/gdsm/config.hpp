#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "gdsm/aggregate.hpp"
#include "gdsm/augment.hpp"
#include "gdsm/errors.hpp"
#include "gdsm/extract.hpp"
#include "gdsm/nn/train.hpp"
#include "gdsm/rng.hpp"

namespace gdsm {

// Everything a pipeline run needs, with defaults mirroring Tables 1-4 and
// the published constants (C1 = 10, C2 = 3, average aggregation). A config
// file hash stamps every artifact; downstream stages refuse mismatches.
struct PipelineConfig {
    std::uint64_t seed = 7;
    int threads = 0;

    // paths (relative entries resolve against work_dir; a relative work_dir
    // resolves against the config file's directory)
    std::string work_dir = ".";
    std::string manifest = "cohort/manifest.jsonl";
    std::string regions;  // empty = built-in Table 1 defaults with box masks
    std::string archive_dir = "archive";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";

    int split_bins = 20;
    double train_frac = 0.8;

    SliceTable global_slices = default_slice_table();
    AugmentationConfig augmentation;
    nn::TrainingConfig training;

    std::string backbone = "tiny";
    std::string warm_start;
    int tail_trainable = 4;

    int c1 = 10;
    int c2 = 3;

    AggregationMode aggregation = AggregationMode::average;
    RegressorKind regressor = RegressorKind::linear;
    RegressorParams regressor_params;

    int phantom_n = 289;
    double phantom_age_lo = 19.0;
    double phantom_age_hi = 77.0;
    double phantom_noise_sigma = 4.0;
    double phantom_shrink_rate = 0.004;
    double phantom_ventricle_growth = 0.006;

    // Filled by load_config before path resolution; every stage stamps its
    // artifacts with this value.
    std::string hash;
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_interval(const Interval& iv) {
    return std::to_string(iv.lo) + ":" + std::to_string(iv.hi);
}

inline Interval parse_int_interval(const std::string& s, const std::string& what) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw FormatError(what + ": expected \"lo:hi\", got \"" + s + "\"");
    try {
        return Interval{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw FormatError(what + ": expected \"lo:hi\", got \"" + s + "\"");
    }
}

inline std::pair<double, double> parse_double_interval(const std::string& s, const std::string& what) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw FormatError(what + ": expected \"lo:hi\", got \"" + s + "\"");
    try {
        return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw FormatError(what + ": expected \"lo:hi\", got \"" + s + "\"");
    }
}

}  // namespace detail

// Canonical text form: fixed section and key order, deterministic number
// formatting. Both the file writer and the config hash build on this.
inline std::string serialize_config(const PipelineConfig& c) {
    using detail::fmt_double;
    using detail::fmt_interval;
    std::string out;
    auto kv = [&](const std::string& key, const std::string& value) { out += key + " = " + value + "\n"; };
    auto kvs = [&](const std::string& key, const std::string& value) { kv(key, "\"" + value + "\""); };
    auto kvb = [&](const std::string& key, bool value) { kv(key, value ? "true" : "false"); };

    kv("seed", std::to_string(c.seed));
    kv("threads", std::to_string(c.threads));
    out += "\n[paths]\n";
    kvs("work_dir", c.work_dir);
    kvs("manifest", c.manifest);
    kvs("regions", c.regions);
    kvs("archive_dir", c.archive_dir);
    kvs("checkpoint_dir", c.checkpoint_dir);
    kvs("report_dir", c.report_dir);
    out += "\n[split]\n";
    kv("bins", std::to_string(c.split_bins));
    kv("train_frac", fmt_double(c.train_frac));
    out += "\n[global_slices]\n";
    for (Plane p : kAllPlanes) {
        const auto& iv = c.global_slices.of(p);
        kvs(plane_name(p), iv ? fmt_interval(*iv) : "");
    }
    out += "\n[augmentation]\n";
    kv("rotation_deg", fmt_double(c.augmentation.rotation_deg_max));
    kv("width_shift", fmt_double(c.augmentation.width_shift_frac));
    kv("height_shift", fmt_double(c.augmentation.height_shift_frac));
    kvb("horizontal_flip", c.augmentation.horizontal_flip);
    kvb("vertical_flip", c.augmentation.vertical_flip);
    kvs("local_count", fmt_interval(c.augmentation.local_count_range));
    kvs("global_count", fmt_interval(c.augmentation.global_count_range));
    out += "\n[training]\n";
    kv("learning_rate", fmt_double(c.training.learning_rate));
    kv("epochs", std::to_string(c.training.epochs));
    kv("batch_size", std::to_string(c.training.batch_size));
    kv("patience", std::to_string(c.training.patience));
    kv("lr_plateau_epochs", std::to_string(c.training.lr_plateau_epochs));
    out += "\n[model]\n";
    kvs("backbone", c.backbone);
    kvs("warm_start", c.warm_start);
    kv("tail_trainable", std::to_string(c.tail_trainable));
    out += "\n[selection]\n";
    kv("c1", std::to_string(c.c1));
    kv("c2", std::to_string(c.c2));
    out += "\n[aggregation]\n";
    kvs("mode", aggregation_mode_name(c.aggregation));
    kvs("regressor", regressor_kind_name(c.regressor));
    kv("svr_c", fmt_double(c.regressor_params.svr_c));
    kv("svr_epsilon", fmt_double(c.regressor_params.svr_epsilon));
    kv("svr_gamma", fmt_double(c.regressor_params.svr_gamma));
    kv("forest_trees", std::to_string(c.regressor_params.forest_trees));
    kv("forest_min_leaf", std::to_string(c.regressor_params.forest_min_leaf));
    out += "\n[phantom]\n";
    kv("n", std::to_string(c.phantom_n));
    kvs("ages", fmt_double(c.phantom_age_lo) + ":" + fmt_double(c.phantom_age_hi));
    kv("noise_sigma", fmt_double(c.phantom_noise_sigma));
    kv("shrink_rate", fmt_double(c.phantom_shrink_rate));
    kv("ventricle_growth_rate", fmt_double(c.phantom_ventricle_growth));
    return out;
}

inline std::string config_hash(const PipelineConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize_config(c))));
    return buf;
}

inline void save_config(const PipelineConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write config " + path);
    out << serialize_config(c);
}

namespace detail {

struct RawConfig {
    // section -> key -> value, with consumption tracking for typo detection
    std::map<std::string, std::map<std::string, std::string>> sections;
    mutable std::map<std::string, bool> consumed;

    std::string id(const std::string& s, const std::string& k) const { return s + "." + k; }

    bool has(const std::string& s, const std::string& k) const {
        auto it = sections.find(s);
        return it != sections.end() && it->second.count(k) > 0;
    }

    std::string get(const std::string& s, const std::string& k) const {
        consumed[id(s, k)] = true;
        return sections.at(s).at(k);
    }
};

inline std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline RawConfig parse_toml_like(std::istream& in, const std::string& origin) {
    RawConfig raw;
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside quotes
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = strip(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw FormatError(origin + ":" + std::to_string(lineno) + ": malformed section header");
            section = strip(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty()) throw FormatError(origin + ":" + std::to_string(lineno) + ": empty key");
        raw.sections[section][key] = value;
    }
    return raw;
}

inline bool parse_bool(const std::string& v, const std::string& what) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw FormatError(what + ": expected true/false, got \"" + v + "\"");
}

template <typename T>
T parse_number(const std::string& v, const std::string& what) {
    try {
        if constexpr (std::is_same_v<T, double>) return std::stod(v);
        else if constexpr (std::is_same_v<T, std::uint64_t>) return std::stoull(v);
        else return static_cast<T>(std::stoll(v));
    } catch (const std::exception&) {
        throw FormatError(what + ": expected a number, got \"" + v + "\"");
    }
}

}  // namespace detail

inline PipelineConfig parse_config(std::istream& in, const std::string& origin) {
    const detail::RawConfig raw = detail::parse_toml_like(in, origin);
    PipelineConfig c;

    auto str = [&](const std::string& s, const std::string& k, std::string& dst) {
        if (raw.has(s, k)) dst = raw.get(s, k);
    };
    auto boolean = [&](const std::string& s, const std::string& k, bool& dst) {
        if (raw.has(s, k)) dst = detail::parse_bool(raw.get(s, k), raw.id(s, k));
    };
    auto num = [&](const std::string& s, const std::string& k, auto& dst) {
        using T = std::decay_t<decltype(dst)>;
        if (raw.has(s, k)) dst = detail::parse_number<T>(raw.get(s, k), raw.id(s, k));
    };
    auto interval = [&](const std::string& s, const std::string& k, Interval& dst) {
        if (raw.has(s, k)) dst = detail::parse_int_interval(raw.get(s, k), raw.id(s, k));
    };

    num("", "seed", c.seed);
    num("", "threads", c.threads);
    str("paths", "work_dir", c.work_dir);
    str("paths", "manifest", c.manifest);
    str("paths", "regions", c.regions);
    str("paths", "archive_dir", c.archive_dir);
    str("paths", "checkpoint_dir", c.checkpoint_dir);
    str("paths", "report_dir", c.report_dir);
    num("split", "bins", c.split_bins);
    num("split", "train_frac", c.train_frac);
    for (Plane p : kAllPlanes) {
        if (!raw.has("global_slices", plane_name(p))) continue;
        const std::string v = raw.get("global_slices", plane_name(p));
        if (v.empty()) {
            c.global_slices.of(p) = std::nullopt;
        } else {
            c.global_slices.of(p) = detail::parse_int_interval(v, raw.id("global_slices", plane_name(p)));
        }
    }
    num("augmentation", "rotation_deg", c.augmentation.rotation_deg_max);
    num("augmentation", "width_shift", c.augmentation.width_shift_frac);
    num("augmentation", "height_shift", c.augmentation.height_shift_frac);
    boolean("augmentation", "horizontal_flip", c.augmentation.horizontal_flip);
    boolean("augmentation", "vertical_flip", c.augmentation.vertical_flip);
    interval("augmentation", "local_count", c.augmentation.local_count_range);
    interval("augmentation", "global_count", c.augmentation.global_count_range);
    num("training", "learning_rate", c.training.learning_rate);
    num("training", "epochs", c.training.epochs);
    num("training", "batch_size", c.training.batch_size);
    num("training", "patience", c.training.patience);
    num("training", "lr_plateau_epochs", c.training.lr_plateau_epochs);
    str("model", "backbone", c.backbone);
    str("model", "warm_start", c.warm_start);
    num("model", "tail_trainable", c.tail_trainable);
    num("selection", "c1", c.c1);
    num("selection", "c2", c.c2);
    if (raw.has("aggregation", "mode")) {
        const std::string v = raw.get("aggregation", "mode");
        if (v == "average")
            c.aggregation = AggregationMode::average;
        else if (v == "regression")
            c.aggregation = AggregationMode::regression;
        else
            throw FormatError("aggregation.mode must be average or regression, got \"" + v + "\"");
    }
    if (raw.has("aggregation", "regressor")) {
        const std::string v = raw.get("aggregation", "regressor");
        if (v == "linear")
            c.regressor = RegressorKind::linear;
        else if (v == "support_vector")
            c.regressor = RegressorKind::support_vector;
        else if (v == "random_forest")
            c.regressor = RegressorKind::random_forest;
        else
            throw FormatError("aggregation.regressor must be linear, support_vector or random_forest");
    }
    num("aggregation", "svr_c", c.regressor_params.svr_c);
    num("aggregation", "svr_epsilon", c.regressor_params.svr_epsilon);
    num("aggregation", "svr_gamma", c.regressor_params.svr_gamma);
    num("aggregation", "forest_trees", c.regressor_params.forest_trees);
    num("aggregation", "forest_min_leaf", c.regressor_params.forest_min_leaf);
    num("phantom", "n", c.phantom_n);
    if (raw.has("phantom", "ages")) {
        const auto [lo, hi] = detail::parse_double_interval(raw.get("phantom", "ages"), "phantom.ages");
        c.phantom_age_lo = lo;
        c.phantom_age_hi = hi;
    }
    num("phantom", "noise_sigma", c.phantom_noise_sigma);
    num("phantom", "shrink_rate", c.phantom_shrink_rate);
    num("phantom", "ventricle_growth_rate", c.phantom_ventricle_growth);

    for (const auto& [section, entries] : raw.sections)
        for (const auto& [key, value] : entries)
            if (!raw.consumed.count(raw.id(section, key)))
                throw FormatError(origin + ": unknown config key " +
                                  (section.empty() ? key : section + "." + key));

    c.regressor_params.seed = c.seed;
    c.training.seed = c.seed;
    c.training.threads = c.threads;
    return c;
}

// Loads a config file. A relative work_dir resolves against the config
// file's directory, and GDSM_SEED (when set) overrides the seed before the
// config hash is computed.
inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileMissing("no such config file: " + path);
    PipelineConfig c = parse_config(in, path);

    if (const char* env_seed = std::getenv("GDSM_SEED")) {
        c.seed = detail::parse_number<std::uint64_t>(env_seed, "GDSM_SEED");
        c.regressor_params.seed = c.seed;
        c.training.seed = c.seed;
    }
    c.hash = config_hash(c);

    namespace fs = std::filesystem;
    fs::path wd(c.work_dir);
    if (wd.is_relative()) wd = fs::path(path).parent_path() / wd;
    c.work_dir = wd.lexically_normal().string();
    if (c.work_dir.empty()) c.work_dir = ".";
    return c;
}

// Resolves a configured path against work_dir.
inline std::string resolved_path(const PipelineConfig& c, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute()) return p.string();
    return (std::filesystem::path(c.work_dir) / p).lexically_normal().string();
}

}  // namespace gdsm
