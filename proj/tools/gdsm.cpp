// gdsm — batch CLI for the greedy dual-stream brain-age pipeline.
//
// Commands: phantom, extract, train, evaluate, report. Exit codes: 0 on
// success, 1 on runtime errors, 2 on usage errors.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gdsm/phantom.hpp"
#include "gdsm/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

gdsm::PipelineConfig load_config_or_default(const std::string& path) {
    if (path.empty()) {
        gdsm::PipelineConfig config;
        if (const char* env_seed = std::getenv("GDSM_SEED")) {
            config.seed = std::strtoull(env_seed, nullptr, 10);
            config.training.seed = config.seed;
            config.regressor_params.seed = config.seed;
        }
        config.hash = gdsm::config_hash(config);
        return config;
    }
    return gdsm::load_config(path);
}

int cmd_phantom(const std::string& config_path, int n, const std::string& ages,
                std::uint64_t seed, bool seed_given, std::string out_dir, bool skip_existing) {
    gdsm::PipelineConfig config = load_config_or_default(config_path);

    gdsm::CohortParams cohort;
    cohort.n = n > 0 ? n : config.phantom_n;
    cohort.age_lo = config.phantom_age_lo;
    cohort.age_hi = config.phantom_age_hi;
    cohort.seed = seed_given ? seed : config.seed;
    if (const char* env_seed = std::getenv("GDSM_SEED"))
        cohort.seed = std::strtoull(env_seed, nullptr, 10);
    cohort.noise_sigma = config.phantom_noise_sigma;
    cohort.shrink_rate = config.phantom_shrink_rate;
    cohort.ventricle_growth_rate = config.phantom_ventricle_growth;
    if (!ages.empty()) {
        const auto [lo, hi] = gdsm::detail::parse_double_interval(ages, "--ages");
        cohort.age_lo = lo;
        cohort.age_hi = hi;
    }

    if (out_dir.empty()) {
        out_dir = config_path.empty()
                      ? "cohort"
                      : fs::path(gdsm::resolved_path(config, config.manifest)).parent_path().string();
    }
    if (skip_existing && fs::exists(fs::path(out_dir) / "manifest.jsonl")) {
        std::printf("phantom: %s/manifest.jsonl already exists, skipping\n", out_dir.c_str());
        return 0;
    }

    const gdsm::DatasetManifest manifest = gdsm::generate_cohort(cohort, out_dir);
    std::printf("phantom: wrote %zu subjects (ages %.1f..%.1f, seed %llu) under %s\n",
                manifest.records.size(), cohort.age_lo, cohort.age_hi,
                static_cast<unsigned long long>(cohort.seed), out_dir.c_str());
    return 0;
}

int cmd_extract(const std::string& config_path, bool skip_existing) {
    const gdsm::PipelineConfig config = gdsm::load_config(config_path);
    const gdsm::ExtractSummary summary = gdsm::run_extract(config, skip_existing);
    std::printf("extract: %ld train / %ld val subjects, %ld augmented train patches",
                summary.train_subjects, summary.val_subjects, summary.train_augmented);
    if (summary.skipped_empty_mask > 0)
        std::printf(" (warning: %ld slices skipped, mask did not reach them)",
                    summary.skipped_empty_mask);
    std::printf("\n");
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& stage_name, bool skip_existing) {
    const gdsm::PipelineConfig config = gdsm::load_config(config_path);
    gdsm::TrainStage stage = gdsm::TrainStage::local;
    if (stage_name == "global") stage = gdsm::TrainStage::global;
    if (stage_name == "correction") stage = gdsm::TrainStage::correction;

    const auto results = gdsm::run_train(config, stage, skip_existing);
    if (results.empty()) {
        std::printf("train --stage %s: checkpoints current, nothing to do\n", stage_name.c_str());
        return 0;
    }
    for (const auto& r : results)
        std::printf("train --stage %s: best val MAE %.4f at epoch %d (%d epochs run)\n",
                    stage_name.c_str(), r.best_val_mae, r.best_epoch, r.epochs_run);
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& variant_name,
                 const std::string& split_name) {
    const gdsm::PipelineConfig config = gdsm::load_config(config_path);
    const gdsm::SplitTag split =
        split_name == "train" ? gdsm::SplitTag::train : gdsm::SplitTag::validation;
    gdsm::EvalVariant variant = gdsm::EvalVariant::full;
    if (variant_name == "local") variant = gdsm::EvalVariant::local;
    if (variant_name == "global") variant = gdsm::EvalVariant::global;
    if (variant_name == "local+global") variant = gdsm::EvalVariant::local_global;

    const gdsm::EvaluateOutput out = gdsm::run_evaluate(config, split, variant);
    std::fputs(gdsm::metrics_to_table(out.metrics, "GDSM " + variant_name + " on " + split_name).c_str(),
               stdout);
    std::printf("reports: %s\n         %s\n         %s\n", out.metrics_json_path.c_str(),
                out.per_slice_csv_path.c_str(), out.matrix_path.c_str());
    return 0;
}

int cmd_report(const std::string& config_path, bool per_slice, const std::string& split_name) {
    const gdsm::PipelineConfig config = gdsm::load_config(config_path);
    if (!per_slice) {
        std::fprintf(stderr, "report: nothing requested (use --per-slice)\n");
        return 2;
    }
    const gdsm::SplitTag split =
        split_name == "train" ? gdsm::SplitTag::train : gdsm::SplitTag::validation;
    const std::string path = gdsm::run_per_slice_report(config, split);
    std::printf("report: wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GDSM brain-age pipeline"};
    app.require_subcommand(1);

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic aging cohort");
    std::string ph_config, ph_ages, ph_out;
    int ph_n = 0;
    std::uint64_t ph_seed = 0;
    bool ph_skip = false;
    phantom->add_option("--config", ph_config, "pipeline config file")->check(CLI::ExistingFile);
    phantom->add_option("--n", ph_n, "number of subjects");
    phantom->add_option("--ages", ph_ages, "age range lo:hi (within 19:77)");
    auto* seed_opt = phantom->add_option("--seed", ph_seed, "cohort seed");
    phantom->add_option("--out", ph_out, "output directory");
    phantom->add_flag("--skip-existing", ph_skip, "no-op when the cohort already exists");

    // extract
    auto* extract = app.add_subcommand("extract", "split the manifest and build patch archives");
    std::string ex_config;
    bool ex_skip = false;
    extract->add_option("--config", ex_config, "pipeline config file")
        ->required()
        ->check(CLI::ExistingFile);
    extract->add_flag("--skip-existing", ex_skip, "no-op when archives match the config hash");

    // train
    auto* train = app.add_subcommand("train", "train one pipeline stage");
    std::string tr_config, tr_stage;
    bool tr_skip = false;
    train->add_option("--config", tr_config, "pipeline config file")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--stage", tr_stage, "local | global | correction")
        ->required()
        ->check(CLI::IsMember({"local", "global", "correction"}));
    train->add_flag("--skip-existing", tr_skip, "no-op when checkpoints match the config hash");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "run one Table-7 style configuration");
    std::string ev_config, ev_variant = "full", ev_split = "val";
    evaluate->add_option("--config", ev_config, "pipeline config file")
        ->required()
        ->check(CLI::ExistingFile);
    evaluate->add_option("--variant", ev_variant, "local | global | local+global | full")
        ->check(CLI::IsMember({"local", "global", "local+global", "full"}));
    evaluate->add_option("--split", ev_split, "train | val")
        ->check(CLI::IsMember({"train", "val"}));

    // report
    auto* report = app.add_subcommand("report", "standalone reports");
    std::string rp_config, rp_split = "val";
    bool rp_per_slice = false;
    report->add_option("--config", rp_config, "pipeline config file")
        ->required()
        ->check(CLI::ExistingFile);
    report->add_flag("--per-slice", rp_per_slice, "local-stream per-slice MAE CSV");
    report->add_option("--split", rp_split, "train | val")->check(CLI::IsMember({"train", "val"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (phantom->parsed())
            return cmd_phantom(ph_config, ph_n, ph_ages, ph_seed, seed_opt->count() > 0, ph_out, ph_skip);
        if (extract->parsed()) return cmd_extract(ex_config, ex_skip);
        if (train->parsed()) return cmd_train(tr_config, tr_stage, tr_skip);
        if (evaluate->parsed()) return cmd_evaluate(ev_config, ev_variant, ev_split);
        if (report->parsed()) return cmd_report(rp_config, rp_per_slice, rp_split);
    } catch (const gdsm::Error& e) {
        std::cerr << "gdsm: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "gdsm: unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
