#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "gdsm/phantom.hpp"

using namespace gdsm;
namespace fs = std::filesystem;

namespace {

long foreground_count(const Volume3D& vol) {
    long n = 0;
    for (float v : vol.v)
        if (v > 0.0f) ++n;
    return n;
}

long region_voxels(const Volume3D& vol, const BoxMask& box) {
    long n = 0;
    for (int z = box.z.lo; z <= box.z.hi; ++z)
        for (int y = box.y.lo; y <= box.y.hi; ++y)
            for (int x = box.x.lo; x <= box.x.hi; ++x)
                if (vol.at(x, y, z) >= kPhantomRegionIntensity - 0.5f) ++n;
    return n;
}

// Extent along x on the row through the region center; a full-box scan
// would pick up neighboring regions whose ellipsoids overlap this box.
int region_x_extent(const Volume3D& vol, const BoxMask& box) {
    const int yc = (box.y.lo + box.y.hi + 1) / 2;
    const int zc = (box.z.lo + box.z.hi + 1) / 2;
    int lo = kDims1mm.nx, hi = -1;
    for (int x = box.x.lo; x <= box.x.hi; ++x)
        if (vol.at(x, yc, zc) >= kPhantomRegionIntensity - 0.5f) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    return hi - lo + 1;
}

PhantomParams params_at(double age, double noise = 0.0) {
    PhantomParams p;
    p.age = age;
    p.noise_sigma = noise;
    p.seed = 42;
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phantom volumes have the registered dimensions") {
    const PhantomSubject s = generate_subject(params_at(40.0), "dims");
    CHECK(s.vol_1mm.dims == kDims1mm);
    CHECK(s.vol_2mm.dims == kDims2mm);
    CHECK(s.vol_1mm.spacing_mm[0] == 1.0f);
    CHECK(s.vol_2mm.spacing_mm[0] == 2.0f);
}

TEST_CASE("same params generate byte-identical volumes") {
    const PhantomSubject a = generate_subject(params_at(55.0, 4.0), "det");
    const PhantomSubject b = generate_subject(params_at(55.0, 4.0), "det");
    CHECK(a.vol_1mm.v == b.vol_1mm.v);
    CHECK(a.vol_2mm.v == b.vol_2mm.v);
    const PhantomSubject c = generate_subject(params_at(55.0, 4.0), "other_id");
    CHECK(a.vol_1mm.v != c.vol_1mm.v);  // noise stream is keyed by subject
}

TEST_CASE("foreground voxel count is strictly monotone in age at zero noise") {
    long previous = -1;
    for (double age : {19.0, 33.0, 47.0, 61.0, 75.0}) {
        const PhantomSubject s = generate_subject(params_at(age), "mono");
        const long count = foreground_count(s.vol_1mm);
        if (previous >= 0) CHECK(count < previous);
        previous = count;
    }
}

TEST_CASE("every region shrinks from age 19 to age 77") {
    const PhantomSubject young = generate_subject(params_at(19.0), "young");
    const PhantomSubject old = generate_subject(params_at(77.0), "old");
    for (const RegionSpec& region : default_local_regions()) {
        const long v19 = region_voxels(young.vol_1mm, *region.box);
        const long v77 = region_voxels(old.vol_1mm, *region.box);
        INFO(region.name);
        CHECK(v19 > v77);
        CHECK(v77 > 0);
    }
}

TEST_CASE("measured region radius tracks the analytic shrink within one voxel") {
    const auto regions = default_local_regions();
    const BoxMask& hippocampus = *regions[0].box;  // x half-extent 7.5

    const double half_x = (hippocampus.x.hi - hippocampus.x.lo) / 2.0;
    for (double age : {19.0, 77.0}) {
        const PhantomSubject s = generate_subject(params_at(age), "radius");
        const double scale = 1.0 - 0.004 * (age - 19.0);
        const double analytic_extent = 2.0 * half_x * scale;
        const int measured = region_x_extent(s.vol_1mm, hippocampus);
        INFO("age " << age << " analytic " << analytic_extent << " measured " << measured);
        CHECK(std::abs(measured - analytic_extent) <= 1.0 + 1e-9);
    }
    const double ratio = 1.0 - 0.004 * (77.0 - 19.0);
    CHECK(ratio == Catch::Approx(0.768));
}

TEST_CASE("2 mm volume is the block mean of the 1 mm volume") {
    const PhantomSubject s = generate_subject(params_at(48.0, 4.0), "mean");
    double m1 = 0.0, m2 = 0.0;
    for (float v : s.vol_1mm.v) m1 += v;
    for (float v : s.vol_2mm.v) m2 += v;
    m1 /= static_cast<double>(s.vol_1mm.v.size());
    m2 /= static_cast<double>(s.vol_2mm.v.size());
    CHECK(std::abs(m1 - m2) < 1e-6);
}

TEST_CASE("invalid phantom parameters are rejected") {
    CHECK_THROWS_AS(generate_subject(params_at(12.0)), InvalidParams);
    CHECK_THROWS_AS(generate_subject(params_at(90.0)), InvalidParams);
    PhantomParams bad = params_at(40.0);
    bad.noise_sigma = -1.0;
    CHECK_THROWS_AS(generate_subject(bad), InvalidParams);
    PhantomParams collapse = params_at(77.0);
    collapse.shrink_rate = 0.05;  // radii go negative by 77
    CHECK_THROWS_AS(generate_subject(collapse), InvalidParams);
}

TEST_CASE("cohort generation writes manifest, volumes and region config") {
    const fs::path dir = fs::temp_directory_path() / "gdsm_test_cohort";
    fs::remove_all(dir);

    CohortParams cohort;
    cohort.n = 3;
    cohort.seed = 11;
    cohort.noise_sigma = 2.0;
    const DatasetManifest manifest = generate_cohort(cohort, dir.string());

    REQUIRE(manifest.records.size() == 3);
    CHECK(manifest.records[0].gender == Gender::female);
    CHECK(manifest.records[1].gender == Gender::male);
    CHECK(manifest.records[2].gender == Gender::female);
    for (const auto& r : manifest.records) {
        CHECK(r.age >= 19.0);
        CHECK(r.age <= 77.0);
        CHECK(fs::exists(dir / r.path_1mm));
        CHECK(fs::exists(dir / r.path_2mm));
    }
    CHECK(fs::exists(dir / "manifest.jsonl"));
    CHECK(fs::exists(dir / "regions.json"));

    const DatasetManifest loaded = load_manifest((dir / "manifest.jsonl").string());
    CHECK(loaded.records.size() == 3);

    CohortParams single;
    single.n = 1;
    const fs::path single_dir = fs::temp_directory_path() / "gdsm_test_cohort_single";
    fs::remove_all(single_dir);
    CHECK(generate_cohort(single, single_dir.string()).records.size() == 1);

    fs::remove_all(dir);
    fs::remove_all(single_dir);
}

TEST_CASE("two cohorts with the same seed are byte-identical") {
    const fs::path d1 = fs::temp_directory_path() / "gdsm_test_cohort_a";
    const fs::path d2 = fs::temp_directory_path() / "gdsm_test_cohort_b";
    fs::remove_all(d1);
    fs::remove_all(d2);

    CohortParams cohort;
    cohort.n = 2;
    cohort.seed = 77;
    cohort.noise_sigma = 3.0;
    generate_cohort(cohort, d1.string());
    generate_cohort(cohort, d2.string());

    CHECK(file_bytes(d1 / "manifest.jsonl") == file_bytes(d2 / "manifest.jsonl"));
    CHECK(file_bytes(d1 / "volumes/phantom_0001_1mm.gvol") ==
          file_bytes(d2 / "volumes/phantom_0001_1mm.gvol"));
    CHECK(file_bytes(d1 / "volumes/phantom_0002_2mm.gvol") ==
          file_bytes(d2 / "volumes/phantom_0002_2mm.gvol"));

    cohort.seed = 78;
    fs::remove_all(d2);
    generate_cohort(cohort, d2.string());
    CHECK(file_bytes(d1 / "volumes/phantom_0001_1mm.gvol") !=
          file_bytes(d2 / "volumes/phantom_0001_1mm.gvol"));

    fs::remove_all(d1);
    fs::remove_all(d2);
}
