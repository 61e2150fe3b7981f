#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "gdsm/config.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(GDSM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "gdsm_test_cli";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("train --stage local") == 2);  // missing --config

    const fs::path dir = work_dir();
    const std::string cfg = (dir / "usage.toml").string();
    gdsm::save_config(gdsm::PipelineConfig{}, cfg);
    CHECK(run("evaluate --config " + cfg + " --variant bogus") == 2);
    CHECK(run("evaluate --config " + cfg + " --split test") == 2);
    CHECK(run("train --config " + cfg + " --stage warmup") == 2);
}

TEST_CASE("help exits cleanly") {
    CHECK(run("--help") == 0);
    CHECK(run("phantom --help") == 0);
}

TEST_CASE("runtime errors exit with code 1") {
    const fs::path dir = work_dir();
    fs::remove_all(dir / "empty_run");
    fs::create_directories(dir / "empty_run");
    const std::string cfg = (dir / "empty_run" / "cfg.toml").string();
    gdsm::PipelineConfig config;
    config.work_dir = ".";
    gdsm::save_config(config, cfg);

    // no manifest yet -> extract fails; no checkpoints -> correction blocked
    CHECK(run("extract --config " + cfg) == 1);
    CHECK(run("train --config " + cfg + " --stage correction") == 1);
    CHECK(run("evaluate --config " + cfg + " --variant local --split val") == 1);
}

TEST_CASE("phantom command writes a cohort and honors --skip-existing") {
    const fs::path dir = work_dir() / "cohort_cmd";
    fs::remove_all(dir);
    const std::string out = dir.string();

    CHECK(run("phantom --n 1 --ages 30:40 --seed 5 --out " + out) == 0);
    CHECK(fs::exists(dir / "manifest.jsonl"));
    CHECK(fs::exists(dir / "regions.json"));
    CHECK(fs::exists(dir / "volumes/phantom_0001_1mm.gvol"));

    const std::string before = file_bytes(dir / "manifest.jsonl");
    CHECK(run("phantom --n 1 --ages 30:40 --seed 5 --out " + out + " --skip-existing") == 0);
    CHECK(file_bytes(dir / "manifest.jsonl") == before);
    fs::remove_all(dir);
}

TEST_CASE("phantom reruns with one seed are byte-identical, different seeds differ") {
    const fs::path a = work_dir() / "cohort_a";
    const fs::path b = work_dir() / "cohort_b";
    const fs::path c = work_dir() / "cohort_c";
    for (const auto& d : {a, b, c}) fs::remove_all(d);

    CHECK(run("phantom --n 1 --ages 25:35 --seed 9 --out " + a.string()) == 0);
    CHECK(run("phantom --n 1 --ages 25:35 --seed 9 --out " + b.string()) == 0);
    CHECK(run("phantom --n 1 --ages 25:35 --seed 10 --out " + c.string()) == 0);

    CHECK(file_bytes(a / "manifest.jsonl") == file_bytes(b / "manifest.jsonl"));
    CHECK(file_bytes(a / "volumes/phantom_0001_1mm.gvol") ==
          file_bytes(b / "volumes/phantom_0001_1mm.gvol"));
    CHECK(file_bytes(a / "volumes/phantom_0001_1mm.gvol") !=
          file_bytes(c / "volumes/phantom_0001_1mm.gvol"));

    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("GDSM_SEED overrides the phantom seed") {
    const fs::path a = work_dir() / "cohort_env_a";
    const fs::path b = work_dir() / "cohort_env_b";
    fs::remove_all(a);
    fs::remove_all(b);

    CHECK(run("phantom --n 1 --ages 25:35 --seed 9 --out " + a.string()) == 0);
    setenv("GDSM_SEED", "9", 1);
    CHECK(run("phantom --n 1 --ages 25:35 --seed 777 --out " + b.string()) == 0);
    unsetenv("GDSM_SEED");
    CHECK(file_bytes(a / "volumes/phantom_0001_1mm.gvol") ==
          file_bytes(b / "volumes/phantom_0001_1mm.gvol"));

    fs::remove_all(a);
    fs::remove_all(b);
}
