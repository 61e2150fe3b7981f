#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gdsm/aggregate.hpp"
#include "gdsm/archive.hpp"
#include "gdsm/augment.hpp"
#include "gdsm/config.hpp"
#include "gdsm/manifest.hpp"
#include "gdsm/metrics.hpp"
#include "gdsm/phantom.hpp"
#include "gdsm/selection.hpp"
#include "gdsm/volume_io.hpp"

namespace gdsm {

namespace fs = std::filesystem;

using Scalar = float;  // pipeline precision; the test suites also instantiate double

// ---------------------------------------------------------------------------
// Resolved locations and shared lookups.
// ---------------------------------------------------------------------------

struct PipelinePaths {
    std::string manifest;
    std::string regions;
    std::string archive_dir;
    std::string checkpoint_dir;
    std::string report_dir;

    std::string archive_split_dir(SplitTag split) const {
        return (fs::path(archive_dir) / split_tag_name(split)).string();
    }
    std::string checkpoint(nn::StreamKind stream) const {
        return (fs::path(checkpoint_dir) / nn::stream_kind_name(stream)).string();
    }
};

inline PipelinePaths paths_of(const PipelineConfig& c) {
    return {resolved_path(c, c.manifest), c.regions.empty() ? "" : resolved_path(c, c.regions),
            resolved_path(c, c.archive_dir), resolved_path(c, c.checkpoint_dir),
            resolved_path(c, c.report_dir)};
}

// Region config resolution order: explicit [paths] regions entry, then a
// regions.json next to the manifest (the phantom generator writes one), then
// the built-in Table 1 defaults. File-based masks load eagerly.
inline std::vector<RegionSpec> load_effective_regions(const PipelineConfig& c) {
    const PipelinePaths paths = paths_of(c);
    std::string source = paths.regions;
    if (source.empty()) {
        const fs::path beside = fs::path(paths.manifest).parent_path() / "regions.json";
        if (fs::exists(beside)) source = beside.string();
    }
    if (source.empty()) return default_local_regions();

    std::vector<RegionSpec> regions = load_regions(source);
    const fs::path base = fs::path(source).parent_path();
    for (auto& region : regions) {
        if (region.mask_path.empty()) continue;
        fs::path mask_path(region.mask_path);
        if (mask_path.is_relative()) mask_path = base / mask_path;
        region.mask = std::make_shared<Volume3D>(load_volume(mask_path.string(), kDims1mm));
    }
    return regions;
}

// ---------------------------------------------------------------------------
// Extraction stage.
// ---------------------------------------------------------------------------

struct ExtractSummary {
    long train_subjects = 0;
    long val_subjects = 0;
    long train_augmented = 0;
    long skipped_empty_mask = 0;
};

inline ExtractSummary run_extract(const PipelineConfig& config, bool skip_existing = false) {
    const PipelinePaths paths = paths_of(config);

    if (skip_existing) {
        try {
            const ArchiveIndex train_idx = load_archive_index(paths.archive_split_dir(SplitTag::train));
            const ArchiveIndex val_idx = load_archive_index(paths.archive_split_dir(SplitTag::validation));
            if (train_idx.config_hash == config.hash && val_idx.config_hash == config.hash)
                return {static_cast<long>(train_idx.subject_order.size()),
                        static_cast<long>(val_idx.subject_order.size()), 0, 0};
        } catch (const Error&) {
        }
    }

    const DatasetManifest manifest = load_manifest(paths.manifest);
    if (manifest.records.empty()) throw EmptyManifest("manifest has no subjects");
    const auto [train_manifest, val_manifest] =
        stratified_split(manifest, config.split_bins, config.train_frac, config.seed);
    const std::vector<RegionSpec> regions = load_effective_regions(config);
    const fs::path volume_base = fs::path(paths.manifest).parent_path();

    const PlaneCounts expected_local = patch_count(regions);
    const PlaneCounts expected_global = patch_count(config.global_slices);

    ExtractSummary summary;
    for (SplitTag split : {SplitTag::train, SplitTag::validation}) {
        const DatasetManifest& part = split == SplitTag::train ? train_manifest : val_manifest;
        const std::string dir = paths.archive_split_dir(split);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create archive dir " + dir);
        save_manifest(part, (fs::path(paths.archive_dir) /
                             (std::string(split_tag_name(split)) + "_manifest.jsonl"))
                                .string());

        ArchiveIndex index;
        index.config_hash = config.hash;
        index.split = split_tag_name(split);
        for (const auto& r : part.records) index.subject_order.push_back(r.subject_id);

        std::vector<SubjectIndexEntry> entries(part.records.size());
        std::vector<ExtractStats> stats(part.records.size());
        nn::parallel_for(part.records.size(), config.threads, [&](std::size_t i) {
            SubjectRecord record = part.records[i];
            auto resolve = [&](const std::string& p) {
                fs::path path(p);
                return (path.is_absolute() ? path : volume_base / path).string();
            };
            const Volume3D vol_1mm = load_volume(resolve(record.path_1mm), kDims1mm);
            const Volume3D vol_2mm = load_volume(resolve(record.path_2mm), kDims2mm);

            std::vector<ExtractedPatch> patches =
                extract_local_patches(vol_1mm, regions, record, &stats[i]);
            std::vector<ExtractedPatch> global = extract_global_slices(vol_2mm, config.global_slices, record);
            patches.insert(patches.end(), std::make_move_iterator(global.begin()),
                           std::make_move_iterator(global.end()));

            SubjectIndexEntry entry;
            entry.file = patch_file_name(record.subject_id);
            for (const auto& p : patches) {
                (p.stream == Stream::local ? entry.local : entry.global).of(p.plane) += 1;
            }

            if (split == SplitTag::train) {
                const std::size_t clean_count = patches.size();
                for (std::size_t ordinal = 0; ordinal < clean_count; ++ordinal) {
                    const std::uint64_t seed = derive_seed(config.seed, record.subject_id, ordinal);
                    std::vector<ExtractedPatch> copies = augment(patches[ordinal], config.augmentation, seed);
                    entry.augmented += static_cast<long>(copies.size());
                    patches.insert(patches.end(), std::make_move_iterator(copies.begin()),
                                   std::make_move_iterator(copies.end()));
                }
            }
            save_patches(patches, (fs::path(dir) / entry.file).string());
            entries[i] = std::move(entry);
        });

        for (std::size_t i = 0; i < part.records.size(); ++i) {
            const auto& entry = entries[i];
            // Count fidelity: clean patches must match the config-derived sums
            // unless a mask genuinely missed some slices.
            if (entry.global.total() != expected_global.total())
                throw MissingPatches("global patch count mismatch for " + part.records[i].subject_id);
            if (stats[i].skipped_empty_mask == 0 && entry.local.total() != expected_local.total())
                throw MissingPatches("local patch count mismatch for " + part.records[i].subject_id);
            index.subjects[part.records[i].subject_id] = entry;
            if (split == SplitTag::train) summary.train_augmented += entry.augmented;
            summary.skipped_empty_mask += stats[i].skipped_empty_mask;
        }
        save_archive_index(index, dir);
    }
    summary.train_subjects = static_cast<long>(train_manifest.records.size());
    summary.val_subjects = static_cast<long>(val_manifest.records.size());
    return summary;
}

// ---------------------------------------------------------------------------
// Archive loading.
// ---------------------------------------------------------------------------

using PatchFilter = std::function<bool(const ExtractedPatch&)>;

struct LoadedArchive {
    ArchiveIndex index;
    std::vector<std::string> subject_order;
    std::vector<std::vector<ExtractedPatch>> per_subject;  // aligned with subject_order
};

inline LoadedArchive load_archive(const std::string& dir, const PatchFilter& keep = nullptr) {
    LoadedArchive out;
    out.index = load_archive_index(dir);
    out.subject_order = out.index.subject_order;
    out.per_subject.resize(out.subject_order.size());
    for (std::size_t i = 0; i < out.subject_order.size(); ++i) {
        const auto& id = out.subject_order[i];
        const auto entry = out.index.subjects.find(id);
        if (entry == out.index.subjects.end())
            throw FormatError("archive index missing subject " + id);
        std::vector<ExtractedPatch> patches =
            load_patches((fs::path(dir) / entry->second.file).string(), id);
        if (keep) {
            std::erase_if(patches, [&](const ExtractedPatch& p) { return !keep(p); });
        }
        out.per_subject[i] = std::move(patches);
    }
    return out;
}

inline void check_archive_hash(const ArchiveIndex& index, const PipelineConfig& config,
                               const std::string& what) {
    if (index.config_hash != config.hash)
        throw ConfigHashMismatch(what + " was extracted under config hash " + index.config_hash +
                                 " but the current config hashes to " + config.hash +
                                 "; re-run `gdsm extract`");
}

// The returned sets hold pointers into `archive`; the archive must outlive
// them.
inline std::vector<SubjectPatchSet> to_patch_sets(const LoadedArchive& archive) {
    std::vector<SubjectPatchSet> out(archive.subject_order.size());
    for (std::size_t i = 0; i < archive.subject_order.size(); ++i) {
        out[i].subject_id = archive.subject_order[i];
        for (const auto& p : archive.per_subject[i]) {
            out[i].age = p.target_age;
            out[i].add(p);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training stages (greedy order: local -> global -> correction).
// ---------------------------------------------------------------------------

enum class TrainStage : int { local = 0, global = 1, correction = 2 };

inline GdsmBundle<Scalar> load_bundle(const PipelineConfig& config);

inline const char* train_stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::local: return "local";
        case TrainStage::global: return "global";
        default: return "correction";
    }
}

inline bool checkpoint_exists(const PipelinePaths& paths, nn::StreamKind stream) {
    return fs::exists(fs::path(paths.checkpoint(stream)) / "spec.json");
}

inline void require_checkpoint(const PipelinePaths& paths, nn::StreamKind stream,
                               const std::string& needed_for) {
    if (!checkpoint_exists(paths, stream))
        throw StageOrderViolation("no " + std::string(nn::stream_kind_name(stream)) +
                                  " checkpoint; train it before " + needed_for);
}

namespace detail {

inline nn::BackboneSpec backbone_for(const PipelineConfig& config, nn::StreamKind stream) {
    nn::BackboneSpec b;
    b.name = config.backbone;
    b.warm_start = config.warm_start;
    const int side = nn::is_local(stream) ? kPatchSize : nn::kGlobalInputSize;
    b.input_h = side;
    b.input_w = side;
    return b;
}

template <typename S>
std::vector<nn::Sample<S>> samples_for(const nn::PathwayModel<S>& model, const LoadedArchive& archive,
                                       Plane plane, bool local) {
    std::vector<nn::Sample<S>> out;
    for (const auto& patches : archive.per_subject)
        for (const auto& p : patches) {
            if (local && (p.stream != Stream::local || p.plane != plane)) continue;
            if (!local && p.stream != Stream::global) continue;
            out.push_back(nn::make_sample(model, p));
        }
    return out;
}

inline void save_history(const nn::TrainResult& result, const std::string& dir) {
    std::ofstream out(fs::path(dir) / "history.json", std::ios::trunc);
    if (!out) throw IoError("cannot write history in " + dir);
    out << nn::history_to_json(result).dump(2) << "\n";
}

inline bool checkpoint_current(const PipelinePaths& paths, nn::StreamKind stream,
                               const PipelineConfig& config) {
    if (!checkpoint_exists(paths, stream)) return false;
    try {
        std::string hash;
        auto model = nn::load_pathway<Scalar>(paths.checkpoint(stream), &hash);
        return model.trained && hash == config.hash;
    } catch (const Error&) {
        return false;
    }
}

}  // namespace detail

inline std::vector<nn::TrainResult> run_train(const PipelineConfig& config, TrainStage stage,
                                              bool skip_existing = false) {
    const PipelinePaths paths = paths_of(config);
    std::vector<nn::TrainResult> results;

    const auto train_dir = paths.archive_split_dir(SplitTag::train);
    const auto val_dir = paths.archive_split_dir(SplitTag::validation);

    if (stage == TrainStage::local) {
        for (Plane plane : kAllPlanes) {
            const nn::StreamKind stream = nn::local_stream_for(plane);
            if (skip_existing && detail::checkpoint_current(paths, stream, config)) continue;

            const PatchFilter keep_plane = [plane](const ExtractedPatch& p) {
                return p.stream == Stream::local && p.plane == plane;
            };
            LoadedArchive train_arch = load_archive(train_dir, keep_plane);
            LoadedArchive val_arch = load_archive(val_dir, [plane](const ExtractedPatch& p) {
                return p.stream == Stream::local && p.plane == plane && !p.augmented;
            });
            check_archive_hash(train_arch.index, config, "train archive");
            check_archive_hash(val_arch.index, config, "validation archive");

            auto model = nn::build_pathway<Scalar>(stream, detail::backbone_for(config, stream),
                                                   nn::HeadSpec{}, hash_combine(config.seed, 0xb0 + static_cast<int>(plane)));
            auto train_samples = detail::samples_for(model, train_arch, plane, true);
            auto val_samples = detail::samples_for(model, val_arch, plane, true);
            nn::TrainResult result = nn::train(model, train_samples, val_samples, config.training);
            save_pathway(model, paths.checkpoint(stream), config.hash);
            detail::save_history(result, paths.checkpoint(stream));
            results.push_back(std::move(result));
        }
        return results;
    }

    if (stage == TrainStage::global) {
        for (Plane plane : kAllPlanes)
            require_checkpoint(paths, nn::local_stream_for(plane), "the global stage (greedy order)");
        if (skip_existing && detail::checkpoint_current(paths, nn::StreamKind::global, config))
            return results;

        const PatchFilter keep_global = [](const ExtractedPatch& p) { return p.stream == Stream::global; };
        LoadedArchive train_arch = load_archive(train_dir, keep_global);
        LoadedArchive val_arch = load_archive(val_dir, [](const ExtractedPatch& p) {
            return p.stream == Stream::global && !p.augmented;
        });
        check_archive_hash(train_arch.index, config, "train archive");
        check_archive_hash(val_arch.index, config, "validation archive");

        auto model = nn::build_pathway<Scalar>(nn::StreamKind::global,
                                               detail::backbone_for(config, nn::StreamKind::global),
                                               nn::HeadSpec{}, hash_combine(config.seed, 0xb9));
        auto train_samples = detail::samples_for(model, train_arch, Plane::axial, false);
        auto val_samples = detail::samples_for(model, val_arch, Plane::axial, false);
        nn::TrainResult result = nn::train(model, train_samples, val_samples, config.training);
        save_pathway(model, paths.checkpoint(nn::StreamKind::global), config.hash);
        detail::save_history(result, paths.checkpoint(nn::StreamKind::global));
        results.push_back(std::move(result));
        return results;
    }

    // correction stage
    for (Plane plane : kAllPlanes)
        require_checkpoint(paths, nn::local_stream_for(plane), "the correction stage");
    require_checkpoint(paths, nn::StreamKind::global, "the correction stage");
    if (skip_existing && detail::checkpoint_current(paths, nn::StreamKind::correction, config))
        return results;

    GdsmBundle<Scalar> bundle = load_bundle(config);
    const std::vector<RegionSpec> regions = load_effective_regions(config);
    const std::vector<PredictorMeta> columns = canonical_columns(regions, config.global_slices);

    LoadedArchive train_all = load_archive(train_dir);
    LoadedArchive val_clean =
        load_archive(val_dir, [](const ExtractedPatch& p) { return !p.augmented; });
    check_archive_hash(train_all.index, config, "train archive");
    check_archive_hash(val_clean.index, config, "validation archive");

    const std::vector<SubjectPatchSet> train_sets = to_patch_sets(train_all);
    const std::vector<SubjectPatchSet> val_sets = to_patch_sets(val_clean);

    const PredictionMatrix train_matrix =
        assemble_matrix(bundle, train_sets, columns, SplitTag::train, config.hash, config.threads);
    const SelectionResult selection = fit_selection(train_matrix, static_cast<std::size_t>(config.c1));
    const auto train_vectors = age_vectors(train_matrix, selection);

    const PredictionMatrix val_matrix =
        assemble_matrix(bundle, val_sets, columns, SplitTag::validation, config.hash, config.threads);
    const auto val_vectors = age_vectors(val_matrix, selection);

    auto correction = nn::build_correction_model(bundle.global, static_cast<int>(selection.indices.size()),
                                                 config.tail_trainable, hash_combine(config.seed, 0xc0));

    std::vector<nn::Sample<Scalar>> train_samples;
    for (std::size_t i = 0; i < train_all.subject_order.size(); ++i)
        for (const auto& p : train_all.per_subject[i])
            if (p.stream == Stream::global)
                train_samples.push_back(nn::make_sample(correction, p, train_vectors[i]));
    std::vector<nn::Sample<Scalar>> val_samples;
    for (std::size_t i = 0; i < val_clean.subject_order.size(); ++i)
        for (const auto& p : val_clean.per_subject[i])
            if (p.stream == Stream::global)
                val_samples.push_back(nn::make_sample(correction, p, val_vectors[i]));

    nn::TrainResult result = nn::train(correction, train_samples, val_samples, config.training);
    const std::string dir = paths.checkpoint(nn::StreamKind::correction);
    save_pathway(correction, dir, config.hash);
    detail::save_history(result, dir);
    save_selection(selection, (fs::path(dir) / "selection.json").string());
    results.push_back(std::move(result));
    return results;
}

// Loads the four trained stream models, verifying training state and config
// hashes ("exactly three local pathways and one global backbone").
inline GdsmBundle<Scalar> load_bundle(const PipelineConfig& config) {
    const PipelinePaths paths = paths_of(config);
    auto load_one = [&](nn::StreamKind stream) {
        require_checkpoint(paths, stream, "this operation");
        std::string hash;
        auto model = nn::load_pathway<Scalar>(paths.checkpoint(stream), &hash);
        if (!model.trained)
            throw StageOrderViolation(std::string(nn::stream_kind_name(stream)) + " checkpoint is untrained");
        if (hash != config.hash)
            throw ConfigHashMismatch(std::string(nn::stream_kind_name(stream)) +
                                     " checkpoint was trained under config hash " + hash +
                                     ", current config hashes to " + config.hash);
        return model;
    };
    GdsmBundle<Scalar> bundle{load_one(nn::StreamKind::local_axial),
                              load_one(nn::StreamKind::local_coronal),
                              load_one(nn::StreamKind::local_sagittal),
                              load_one(nn::StreamKind::global)};
    return bundle;
}

// ---------------------------------------------------------------------------
// Evaluation variants (the Table 7 configurations).
// ---------------------------------------------------------------------------

enum class EvalVariant : int { local = 0, global = 1, local_global = 2, full = 3 };

inline const char* eval_variant_name(EvalVariant v) {
    switch (v) {
        case EvalVariant::local: return "local";
        case EvalVariant::global: return "global";
        case EvalVariant::local_global: return "local+global";
        default: return "full";
    }
}

struct EvaluateOutput {
    MetricsReport metrics;
    std::vector<PerSliceLoss> per_slice;
    std::vector<double> final_ages;
    std::vector<double> targets;
    std::vector<std::string> subject_ids;
    std::string metrics_json_path;
    std::string metrics_table_path;
    std::string per_slice_csv_path;
    std::string matrix_path;
};

// MAE per (plane, slice_index), pooled over all subjects and all columns
// sharing that slice.
inline std::vector<PerSliceLoss> per_slice_losses(const PredictionMatrix& m) {
    std::map<std::pair<int, int>, std::pair<double, long>> pools;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        auto& pool = pools[{static_cast<int>(m.columns[c].plane), m.columns[c].slice_index}];
        for (std::size_t r = 0; r < m.rows(); ++r) {
            pool.first += std::abs(m.at(r, c) - m.targets[r]);
            pool.second += 1;
        }
    }
    std::vector<PerSliceLoss> out;
    out.reserve(pools.size());
    for (const auto& [key, pool] : pools)
        out.push_back({static_cast<Plane>(key.first), key.second, pool.first / pool.second});
    return out;
}

inline std::vector<PredictorMeta> filter_columns(const std::vector<PredictorMeta>& all, EvalVariant v) {
    std::vector<PredictorMeta> out;
    for (const auto& c : all) {
        const bool want = v == EvalVariant::local      ? c.stream == Stream::local
                          : v == EvalVariant::global   ? c.stream == Stream::global
                                                       : true;
        if (want) out.push_back(c);
    }
    return out;
}

inline EvaluateOutput run_evaluate(const PipelineConfig& config, SplitTag split, EvalVariant variant) {
    if (split != SplitTag::train && split != SplitTag::validation)
        throw InvalidParams("evaluate split must be train or val");
    const PipelinePaths paths = paths_of(config);
    GdsmBundle<Scalar> bundle = load_bundle(config);

    const std::vector<RegionSpec> regions = load_effective_regions(config);
    const std::vector<PredictorMeta> all_columns = canonical_columns(regions, config.global_slices);
    const std::vector<PredictorMeta> columns = filter_columns(all_columns, variant);

    const PatchFilter clean = [](const ExtractedPatch& p) { return !p.augmented; };
    LoadedArchive train_arch = load_archive(paths.archive_split_dir(SplitTag::train), clean);
    check_archive_hash(train_arch.index, config, "train archive");
    const std::vector<SubjectPatchSet> train_sets = to_patch_sets(train_arch);

    // patch sets view the loaded archives, so keep both alive for the whole
    // evaluation
    LoadedArchive val_arch;
    std::vector<SubjectPatchSet> eval_sets;
    if (split == SplitTag::train) {
        eval_sets = train_sets;
    } else {
        val_arch = load_archive(paths.archive_split_dir(SplitTag::validation), clean);
        check_archive_hash(val_arch.index, config, "validation archive");
        eval_sets = to_patch_sets(val_arch);
    }

    Aggregator aggregator(config.aggregation, config.regressor, config.regressor_params);

    PredictionMatrix report_matrix;  // what metrics and per-slice rows come from
    std::vector<double> final_ages;

    if (variant != EvalVariant::full) {
        const PredictionMatrix train_matrix =
            assemble_matrix(bundle, train_sets, columns, SplitTag::train, config.hash, config.threads);
        const SelectionResult sel = fit_selection(train_matrix, static_cast<std::size_t>(config.c1));
        aggregator.fit(train_matrix, sel);
        if (split == SplitTag::train) {
            report_matrix = train_matrix;
        } else {
            report_matrix = assemble_matrix(bundle, eval_sets, columns, SplitTag::validation,
                                            config.hash, config.threads);
        }
        final_ages = aggregator.apply(report_matrix, sel);
    } else {
        require_checkpoint(paths, nn::StreamKind::correction, "the full variant");
        std::string correction_hash;
        auto correction =
            nn::load_pathway<Scalar>(paths.checkpoint(nn::StreamKind::correction), &correction_hash);
        if (correction_hash != config.hash)
            throw ConfigHashMismatch("correction checkpoint does not match the current config");
        const SelectionResult saved_selection = load_selection(
            (fs::path(paths.checkpoint(nn::StreamKind::correction)) / "selection.json").string());

        const std::vector<PredictorMeta> global_columns = filter_columns(all_columns, EvalVariant::global);

        const PredictionMatrix train_matrix =
            assemble_matrix(bundle, train_sets, all_columns, SplitTag::train, config.hash, config.threads);
        const auto train_vectors = age_vectors(train_matrix, saved_selection);
        const PredictionMatrix corrected_train =
            run_correction(correction, train_sets, global_columns, train_vectors, saved_selection,
                           SplitTag::train, config.hash, config.threads);

        const SelectionResult top_c2 = fit_selection(corrected_train, static_cast<std::size_t>(config.c2));
        aggregator.fit(corrected_train, top_c2);

        if (split == SplitTag::train) {
            report_matrix = corrected_train;
        } else {
            const PredictionMatrix eval_matrix = assemble_matrix(
                bundle, eval_sets, all_columns, SplitTag::validation, config.hash, config.threads);
            const auto eval_vectors = age_vectors(eval_matrix, saved_selection);
            report_matrix = run_correction(correction, eval_sets, global_columns, eval_vectors,
                                           saved_selection, SplitTag::validation, config.hash,
                                           config.threads);
        }
        final_ages = aggregator.apply(report_matrix, top_c2);
    }

    EvaluateOutput out;
    out.final_ages = final_ages;
    out.targets = report_matrix.targets;
    out.subject_ids = report_matrix.subject_ids;
    out.metrics = compute_metrics(final_ages, report_matrix.targets);
    out.per_slice = per_slice_losses(report_matrix);

    std::error_code ec;
    fs::create_directories(paths.report_dir, ec);
    const std::string tag =
        std::string(eval_variant_name(variant)) + "_" + split_tag_name(split);
    out.metrics_json_path = (fs::path(paths.report_dir) / ("metrics_" + tag + ".json")).string();
    out.metrics_table_path = (fs::path(paths.report_dir) / ("metrics_" + tag + ".txt")).string();
    out.per_slice_csv_path = (fs::path(paths.report_dir) / ("per_slice_" + tag + ".csv")).string();
    out.matrix_path = (fs::path(paths.report_dir) / ("matrix_" + tag + ".gpmx")).string();

    {
        nlohmann::json j = metrics_to_json(out.metrics);
        j["variant"] = eval_variant_name(variant);
        j["split"] = split_tag_name(split);
        j["config_hash"] = config.hash;
        nlohmann::json preds = nlohmann::json::array();
        for (std::size_t i = 0; i < out.subject_ids.size(); ++i)
            preds.push_back({{"subject_id", out.subject_ids[i]},
                             {"predicted_age", out.final_ages[i]},
                             {"age", out.targets[i]}});
        j["predictions"] = std::move(preds);
        std::ofstream f(out.metrics_json_path, std::ios::trunc);
        if (!f) throw IoError("cannot write " + out.metrics_json_path);
        f << j.dump(2) << "\n";
    }
    {
        std::ofstream f(out.metrics_table_path, std::ios::trunc);
        f << metrics_to_table(out.metrics, "GDSM " + tag);
    }
    {
        std::ofstream f(out.per_slice_csv_path, std::ios::trunc);
        f << per_slice_csv(out.per_slice);
    }
    save_matrix(report_matrix, out.matrix_path);
    return out;
}

// The section 4.5.A-style report: local-stream per-slice validation MAE.
inline std::string run_per_slice_report(const PipelineConfig& config, SplitTag split) {
    const PipelinePaths paths = paths_of(config);
    GdsmBundle<Scalar> bundle = load_bundle(config);
    const std::vector<RegionSpec> regions = load_effective_regions(config);
    const std::vector<PredictorMeta> local_columns =
        filter_columns(canonical_columns(regions, config.global_slices), EvalVariant::local);

    LoadedArchive arch = load_archive(paths.archive_split_dir(split),
                                      [](const ExtractedPatch& p) { return !p.augmented; });
    check_archive_hash(arch.index, config, "archive");
    const PredictionMatrix m = assemble_matrix(bundle, to_patch_sets(arch), local_columns, split,
                                               config.hash, config.threads);

    std::error_code ec;
    fs::create_directories(paths.report_dir, ec);
    const std::string path =
        (fs::path(paths.report_dir) / ("per_slice_local_" + std::string(split_tag_name(split)) + ".csv"))
            .string();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << per_slice_csv(per_slice_losses(m));
    return path;
}

// Mean-age baseline: predict the training mean for every row of the split.
inline double baseline_mae(const PipelineConfig& config, SplitTag split) {
    const PipelinePaths paths = paths_of(config);
    const DatasetManifest train = load_manifest(
        (fs::path(paths.archive_dir) / "train_manifest.jsonl").string());
    const DatasetManifest eval = split == SplitTag::train
                                     ? train
                                     : load_manifest((fs::path(paths.archive_dir) / "val_manifest.jsonl").string());
    double mean = 0.0;
    for (const auto& r : train.records) mean += r.age;
    mean /= static_cast<double>(train.records.size());
    double acc = 0.0;
    for (const auto& r : eval.records) acc += std::abs(r.age - mean);
    return acc / static_cast<double>(eval.records.size());
}

}  // namespace gdsm
