#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gdsm/config.hpp"

using namespace gdsm;
namespace fs = std::filesystem;

TEST_CASE("defaults mirror the published hyperparameters") {
    const PipelineConfig c;
    CHECK(c.training.learning_rate == 0.001);
    CHECK(c.training.epochs == 40);
    CHECK(c.training.batch_size == 32);
    CHECK(c.training.patience == 3);
    CHECK(c.c1 == 10);
    CHECK(c.c2 == 3);
    CHECK(c.aggregation == AggregationMode::average);

    CHECK(c.global_slices.of(Plane::axial) == Interval{30, 49});
    CHECK(c.global_slices.of(Plane::coronal) == Interval{40, 69});
    CHECK(c.global_slices.of(Plane::sagittal) == Interval{30, 59});

    CHECK(c.augmentation.rotation_deg_max == 20.0);
    CHECK(c.augmentation.width_shift_frac == 0.1);
    CHECK(c.augmentation.height_shift_frac == 0.1);
    CHECK(c.augmentation.horizontal_flip);
    CHECK(c.augmentation.vertical_flip);
    CHECK(c.augmentation.local_count_range == Interval{0, 6});
    CHECK(c.augmentation.global_count_range == Interval{0, 10});

    CHECK(c.split_bins == 20);
    CHECK(c.train_frac == 0.8);
    CHECK(c.phantom_n == 289);
    CHECK(c.phantom_age_lo == 19.0);
    CHECK(c.phantom_age_hi == 77.0);
}

TEST_CASE("serialize/parse round-trip preserves the hash") {
    PipelineConfig c;
    c.seed = 1234;
    c.c1 = 7;
    c.global_slices.of(Plane::axial) = Interval{31, 35};
    c.aggregation = AggregationMode::regression;
    c.regressor = RegressorKind::support_vector;
    c.augmentation.vertical_flip = false;

    std::istringstream in(serialize_config(c));
    const PipelineConfig back = parse_config(in, "<mem>");
    CHECK(config_hash(back) == config_hash(c));
    CHECK(back.c1 == 7);
    CHECK(back.aggregation == AggregationMode::regression);
    CHECK(back.regressor == RegressorKind::support_vector);
    CHECK_FALSE(back.augmentation.vertical_flip);
    CHECK(back.global_slices.of(Plane::axial) == Interval{31, 35});
}

TEST_CASE("different settings change the hash") {
    PipelineConfig a, b;
    b.seed = a.seed + 1;
    CHECK(config_hash(a) != config_hash(b));
    PipelineConfig c;
    c.c2 = 4;
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("unknown keys and malformed values are rejected") {
    {
        std::istringstream in("seed = 7\nbanana = 3\n");
        CHECK_THROWS_AS(parse_config(in, "<mem>"), FormatError);
    }
    {
        std::istringstream in("[training]\nepochs = forty\n");
        CHECK_THROWS_AS(parse_config(in, "<mem>"), FormatError);
    }
    {
        std::istringstream in("[augmentation]\nhorizontal_flip = yes\n");
        CHECK_THROWS_AS(parse_config(in, "<mem>"), FormatError);
    }
    {
        std::istringstream in("[aggregation]\nmode = median\n");
        CHECK_THROWS_AS(parse_config(in, "<mem>"), FormatError);
    }
    {
        std::istringstream in("[global_slices]\naxial = 30-49\n");
        CHECK_THROWS_AS(parse_config(in, "<mem>"), FormatError);
    }
}

TEST_CASE("comments and blank lines are tolerated") {
    std::istringstream in(
        "# top comment\n"
        "seed = 9   # trailing comment\n"
        "\n"
        "[selection]\n"
        "c1 = 4\n");
    const PipelineConfig c = parse_config(in, "<mem>");
    CHECK(c.seed == 9);
    CHECK(c.c1 == 4);
    CHECK(c.training.seed == 9);  // derived seeds follow
}

TEST_CASE("GDSM_SEED environment variable overrides the config seed") {
    const fs::path dir = fs::temp_directory_path() / "gdsm_test_config";
    fs::create_directories(dir);
    const std::string path = (dir / "cfg.toml").string();
    PipelineConfig c;
    c.seed = 1;
    save_config(c, path);

    const PipelineConfig plain = load_config(path);
    CHECK(plain.seed == 1);

    setenv("GDSM_SEED", "4242", 1);
    const PipelineConfig overridden = load_config(path);
    unsetenv("GDSM_SEED");
    CHECK(overridden.seed == 4242);
    CHECK(overridden.training.seed == 4242);
    CHECK(overridden.hash != plain.hash);  // seed participates in the hash
    fs::remove_all(dir);
}

TEST_CASE("relative paths resolve against work_dir, which resolves against the config") {
    const fs::path dir = fs::temp_directory_path() / "gdsm_test_config_paths";
    fs::create_directories(dir);
    const std::string path = (dir / "cfg.toml").string();
    {
        std::ofstream f(path);
        f << "[paths]\nwork_dir = \"run\"\nmanifest = \"cohort/manifest.jsonl\"\n";
    }
    const PipelineConfig c = load_config(path);
    CHECK(resolved_path(c, c.manifest) == (dir / "run" / "cohort" / "manifest.jsonl").string());
    CHECK(resolved_path(c, "/abs/path.txt") == "/abs/path.txt");
    fs::remove_all(dir);
}
