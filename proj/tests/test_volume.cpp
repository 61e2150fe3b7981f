#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "gdsm/image.hpp"
#include "gdsm/rng.hpp"
#include "gdsm/volume.hpp"
#include "gdsm/volume_io.hpp"

using namespace gdsm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "gdsm_test_volume";
    fs::create_directories(dir);
    return dir;
}

Volume3D random_volume(Dims dims, std::uint64_t seed) {
    Volume3D vol(dims, {1.0f, 1.0f, 1.0f});
    Rng rng(seed);
    for (auto& v : vol.v) v = static_cast<float>(rng.uniform(0.0, 255.0));
    return vol;
}

}  // namespace

TEST_CASE("raw volume round-trip is bit-exact") {
    const auto dir = temp_dir();
    const Volume3D vol = random_volume({9, 7, 5}, 11);
    const std::string path = (dir / "roundtrip.gvol").string();
    write_volume_raw(vol, path);
    const Volume3D back = load_volume(path, vol.dims);
    CHECK(back.dims == vol.dims);
    CHECK(back.spacing_mm == vol.spacing_mm);
    CHECK(back.v == vol.v);
}

TEST_CASE("phantom-dims file round-trips at 2 mm dims") {
    const auto dir = temp_dir();
    const Volume3D vol = random_volume(kDims2mm, 3);
    const std::string path = (dir / "two_mm.gvol").string();
    write_volume_raw(vol, path);
    const Volume3D back = load_volume(path, kDims2mm);
    CHECK(back.dims == kDims2mm);
    CHECK(back.v == vol.v);
}

TEST_CASE("loading with wrong expected dims fails with DimsMismatch") {
    const auto dir = temp_dir();
    const Volume3D vol = random_volume(kDims2mm, 5);
    const std::string path = (dir / "mismatch.gvol").string();
    write_volume_raw(vol, path);
    CHECK_THROWS_AS(load_volume(path, kDims1mm), DimsMismatch);
}

TEST_CASE("missing and malformed volume files") {
    const auto dir = temp_dir();
    CHECK_THROWS_AS(load_volume((dir / "nope.gvol").string(), kDims2mm), FileMissing);
    const std::string bad = (dir / "bad.gvol").string();
    std::ofstream(bad) << "this is not a volume";
    CHECK_THROWS_AS(load_volume(bad, kDims2mm), FormatError);
}

TEST_CASE("NIfTI float32 write/read, plain and gzipped") {
    const auto dir = temp_dir();
    const Volume3D vol = random_volume({12, 10, 8}, 21);
    for (const char* name : {"vol.nii", "vol.nii.gz"}) {
        const std::string path = (dir / name).string();
        write_volume_nifti(vol, path);
        const Volume3D back = load_volume(path, vol.dims);
        CHECK(back.dims == vol.dims);
        CHECK(back.v == vol.v);
        CHECK(back.spacing_mm == vol.spacing_mm);
    }
}

TEST_CASE("NIfTI int16 data with scl_slope/scl_inter") {
    // Hand-built header: dim=(3,4,3,2), datatype int16, slope 0.5, inter 10.
    std::string bytes(352, '\0');
    auto put32 = [&](std::size_t off, std::uint32_t v) { std::memcpy(bytes.data() + off, &v, 4); };
    auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(bytes.data() + off, &v, 2); };
    auto putf = [&](std::size_t off, float v) { std::memcpy(bytes.data() + off, &v, 4); };
    put32(0, 348);
    put16(40, 3);
    put16(42, 4);
    put16(44, 3);
    put16(46, 2);
    for (int d = 4; d < 8; ++d) put16(40 + 2 * d, 1);
    put16(70, 4);   // int16
    put16(72, 16);
    for (int i = 0; i < 3; ++i) putf(80 + 4 * i, 2.0f);
    putf(108, 352.0f);
    putf(112, 0.5f);
    putf(116, 10.0f);
    bytes[344] = 'n'; bytes[345] = '+'; bytes[346] = '1';
    for (int i = 0; i < 24; ++i) {
        const std::int16_t v = static_cast<std::int16_t>(i * 3 - 7);
        bytes.append(reinterpret_cast<const char*>(&v), 2);
    }
    const auto dir = temp_dir();
    const std::string path = (dir / "scaled.nii").string();
    std::ofstream(path, std::ios::binary) << bytes;

    const Volume3D vol = load_volume(path, {4, 3, 2});
    REQUIRE(vol.v.size() == 24);
    for (int i = 0; i < 24; ++i) CHECK(vol.v[i] == Catch::Approx((i * 3 - 7) * 0.5f + 10.0f));
    CHECK(vol.spacing_mm[0] == 2.0f);
}

TEST_CASE("normalize_patch maps min/max onto [0,1]") {
    Image2D img(2, 3);
    img.v = {10, 12, 14, 16, 18, 20};
    const Image2D out = normalize_patch(img);
    CHECK(out.v.front() == 0.0f);
    CHECK(out.v.back() == 1.0f);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        CHECK(out.v[i] == Catch::Approx((img.v[i] - 10.0f) / 10.0f));
}

TEST_CASE("normalize_patch hand-computed affine map") {
    Image2D img(2, 2);
    img.v = {0, 128, 255, 255};
    const Image2D out = normalize_patch(img);
    CHECK(out.v[0] == 0.0f);
    CHECK(out.v[1] == 128.0f / 255.0f);
    CHECK(out.v[2] == 1.0f);
    CHECK(out.v[3] == 1.0f);
}

TEST_CASE("constant images normalize to all-zeros") {
    Image2D zero(4, 4, 0.0f);
    CHECK(normalize_patch(zero).v == std::vector<float>(16, 0.0f));
    Image2D constant(4, 4, 7.5f);
    CHECK(normalize_patch(constant).v == std::vector<float>(16, 0.0f));
}

TEST_CASE("normalize_patch rejects non-finite input") {
    Image2D img(1, 2);
    img.v = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(normalize_patch(img), NonFiniteInput);
}

TEST_CASE("normalize_patch is idempotent for non-constant images") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Image2D img(6, 5);
        for (auto& v : img.v) v = static_cast<float>(rng.uniform(-40.0, 90.0));
        const Image2D once = normalize_patch(img);
        const Image2D twice = normalize_patch(once);
        CHECK(once.v == twice.v);
    }
}

TEST_CASE("slice shapes follow the plane convention") {
    const Volume3D vol = random_volume({5, 7, 9}, 31);
    const Image2D ax = extract_slice(vol, Plane::axial, 2);
    CHECK((ax.rows == 5 && ax.cols == 7));
    const Image2D co = extract_slice(vol, Plane::coronal, 3);
    CHECK((co.rows == 5 && co.cols == 9));
    const Image2D sa = extract_slice(vol, Plane::sagittal, 4);
    CHECK((sa.rows == 7 && sa.cols == 9));
    CHECK(ax.at(1, 3) == vol.at(1, 3, 2));
    CHECK(co.at(1, 3) == vol.at(1, 3, 3));
    CHECK(sa.at(1, 3) == vol.at(4, 1, 3));
    CHECK_THROWS_AS(extract_slice(vol, Plane::axial, 9), IntervalOutOfBounds);
}

TEST_CASE("block-mean downsample preserves the volume mean") {
    const Volume3D vol = random_volume({16, 12, 10}, 41);
    const Volume3D down = block_mean_downsample2(vol);
    CHECK(down.dims == Dims{8, 6, 5});
    double m1 = 0.0, m2 = 0.0;
    for (float v : vol.v) m1 += v;
    for (float v : down.v) m2 += v;
    m1 /= static_cast<double>(vol.v.size());
    m2 /= static_cast<double>(down.v.size());
    CHECK(std::abs(m1 - m2) < 1e-6);
    CHECK(down.spacing_mm[0] == 2.0f);
}

TEST_CASE("bilinear resize is corner-aligned") {
    Image2D img(2, 2);
    img.v = {0.0f, 1.0f, 2.0f, 3.0f};
    const Image2D out = resize_bilinear(img, 3, 3);
    CHECK(out.at(0, 0) == 0.0f);
    CHECK(out.at(0, 2) == 1.0f);
    CHECK(out.at(2, 0) == 2.0f);
    CHECK(out.at(2, 2) == 3.0f);
    CHECK(out.at(1, 1) == Catch::Approx(1.5f));
}
