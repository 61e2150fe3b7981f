#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "gdsm/binio.hpp"
#include "gdsm/errors.hpp"
#include "gdsm/volume.hpp"

namespace gdsm {

namespace detail {

inline constexpr char kRawMagic[8] = {'G', 'D', 'S', 'M', 'V', 'O', 'L', '1'};
inline constexpr std::size_t kRawMagicField = 16;  // magic padded with zeros

inline std::vector<unsigned char> gunzip_file(const std::string& path) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw IoError("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(gz, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool ok = n == 0;
    gzclose(gz);
    if (!ok) throw FormatError("gzip decode failed for " + path);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GDSM raw phantom format: 16-byte magic "GDSMVOL1", LE uint32 nx,ny,nz,
// float32 sx,sy,sz, then nx*ny*nz float32 intensities in x-fastest order.
// ---------------------------------------------------------------------------

inline void write_volume_raw(const Volume3D& vol, const std::string& path) {
    std::string out;
    out.reserve(detail::kRawMagicField + 24 + vol.v.size() * 4);
    out.append(detail::kRawMagic, sizeof(detail::kRawMagic));
    out.append(detail::kRawMagicField - sizeof(detail::kRawMagic), '\0');
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(vol.dims.nx));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(vol.dims.ny));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(vol.dims.nz));
    for (float s : vol.spacing_mm) detail::put_le<float>(out, s);
    for (float x : vol.v) detail::put_le<float>(out, x);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path);
}

inline Volume3D parse_volume_raw(const std::vector<unsigned char>& bytes, const std::string& origin) {
    const std::size_t header = detail::kRawMagicField + 3 * 4 + 3 * 4;
    if (bytes.size() < header) throw FormatError("truncated GDSM volume: " + origin);
    Volume3D vol;
    const unsigned char* p = bytes.data() + detail::kRawMagicField;
    vol.dims.nx = static_cast<int>(detail::get_le<std::uint32_t>(p));
    vol.dims.ny = static_cast<int>(detail::get_le<std::uint32_t>(p + 4));
    vol.dims.nz = static_cast<int>(detail::get_le<std::uint32_t>(p + 8));
    for (int i = 0; i < 3; ++i) vol.spacing_mm[i] = detail::get_le<float>(p + 12 + 4 * i);
    if (vol.dims.nx < 1 || vol.dims.ny < 1 || vol.dims.nz < 1)
        throw FormatError("invalid dims in GDSM volume: " + origin);
    const std::size_t n = vol.dims.voxels();
    if (bytes.size() != header + n * 4) throw FormatError("payload size mismatch in GDSM volume: " + origin);
    vol.v.resize(n);
    std::memcpy(vol.v.data(), bytes.data() + header, n * 4);
    return vol;
}

// ---------------------------------------------------------------------------
// Minimal NIfTI-1 single-file reader/writer (.nii, .nii.gz). Handles the
// common integer/float datatypes, scl_slope/scl_inter and byte-swapped files.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint16_t swap16(std::uint16_t x) { return static_cast<std::uint16_t>((x >> 8) | (x << 8)); }
inline std::uint32_t swap32(std::uint32_t x) {
    return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

struct NiftiHeaderView {
    bool swapped = false;
    const unsigned char* p = nullptr;

    std::int16_t i16(std::size_t off) const {
        std::uint16_t v = get_le<std::uint16_t>(p + off);
        if (swapped) v = swap16(v);
        std::int16_t out;
        std::memcpy(&out, &v, 2);
        return out;
    }
    float f32(std::size_t off) const {
        std::uint32_t v = get_le<std::uint32_t>(p + off);
        if (swapped) v = swap32(v);
        float out;
        std::memcpy(&out, &v, 4);
        return out;
    }
};

}  // namespace detail

inline Volume3D parse_volume_nifti(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 352) throw FormatError("truncated NIfTI file: " + origin);
    std::uint32_t sizeof_hdr = detail::get_le<std::uint32_t>(bytes.data());
    bool swapped = false;
    if (sizeof_hdr != 348) {
        if (detail::swap32(sizeof_hdr) == 348) {
            swapped = true;
        } else {
            throw FormatError("not a NIfTI-1 file: " + origin);
        }
    }
    const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
    if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0)
        throw FormatError("bad NIfTI magic in " + origin);

    detail::NiftiHeaderView h{swapped, bytes.data()};
    const int ndim = h.i16(40);
    if (ndim < 3) throw FormatError("NIfTI file has fewer than 3 dimensions: " + origin);
    Volume3D vol;
    vol.dims.nx = h.i16(42);
    vol.dims.ny = h.i16(44);
    vol.dims.nz = h.i16(46);
    for (int d = 4; d <= ndim; ++d)
        if (h.i16(40 + 2 * d) > 1) throw FormatError("NIfTI file is not a single 3D volume: " + origin);
    if (vol.dims.nx < 1 || vol.dims.ny < 1 || vol.dims.nz < 1)
        throw FormatError("invalid NIfTI dims in " + origin);
    vol.spacing_mm = {h.f32(80), h.f32(84), h.f32(88)};

    const int datatype = h.i16(70);
    float slope = h.f32(112);
    const float inter = h.f32(116);
    if (slope == 0.0f) slope = 1.0f;
    std::size_t offset = static_cast<std::size_t>(h.f32(108));
    if (offset < 352) offset = 352;

    const std::size_t n = vol.dims.voxels();
    vol.v.resize(n);

    auto load = [&](auto tag, std::size_t width) {
        using T = decltype(tag);
        if (bytes.size() < offset + n * width) throw FormatError("truncated NIfTI payload: " + origin);
        const unsigned char* src = bytes.data() + offset;
        for (std::size_t i = 0; i < n; ++i) {
            unsigned char raw[8];
            std::memcpy(raw, src + i * width, width);
            if (swapped) std::reverse(raw, raw + width);
            T value;
            std::memcpy(&value, raw, width);
            vol.v[i] = static_cast<float>(value) * slope + inter;
        }
    };

    switch (datatype) {
        case 2: load(std::uint8_t{}, 1); break;
        case 4: load(std::int16_t{}, 2); break;
        case 8: load(std::int32_t{}, 4); break;
        case 16: load(float{}, 4); break;
        case 64: load(double{}, 8); break;
        case 256: load(std::int8_t{}, 1); break;
        case 512: load(std::uint16_t{}, 2); break;
        case 768: load(std::uint32_t{}, 4); break;
        default: throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + origin);
    }
    return vol;
}

// Writes a float32 single-file NIfTI-1 volume; gzip-compressed when the path
// ends in .gz.
inline void write_volume_nifti(const Volume3D& vol, const std::string& path) {
    std::string out(352, '\0');
    auto put32 = [&](std::size_t off, std::uint32_t v) { std::memcpy(out.data() + off, &v, 4); };
    auto put16 = [&](std::size_t off, std::int16_t v) { std::memcpy(out.data() + off, &v, 2); };
    auto putf = [&](std::size_t off, float v) { std::memcpy(out.data() + off, &v, 4); };
    put32(0, 348);
    put16(40, 3);
    put16(42, static_cast<std::int16_t>(vol.dims.nx));
    put16(44, static_cast<std::int16_t>(vol.dims.ny));
    put16(46, static_cast<std::int16_t>(vol.dims.nz));
    for (int d = 4; d < 8; ++d) put16(40 + 2 * d, 1);
    put16(70, 16);  // float32
    put16(72, 32);
    putf(76, 1.0f);
    for (int i = 0; i < 3; ++i) putf(80 + 4 * i, vol.spacing_mm[i]);
    putf(108, 352.0f);  // vox_offset
    putf(112, 1.0f);    // scl_slope
    out[344] = 'n';
    out[345] = '+';
    out[346] = '1';
    out.append(reinterpret_cast<const char*>(vol.v.data()), vol.v.size() * 4);

    if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
        gzFile gz = gzopen(path.c_str(), "wb");
        if (!gz) throw IoError("cannot write " + path);
        const bool ok = gzwrite(gz, out.data(), static_cast<unsigned>(out.size())) ==
                        static_cast<int>(out.size());
        gzclose(gz);
        if (!ok) throw IoError("gzip write failed for " + path);
    } else {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + path);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("write failed for " + path);
    }
}

// Loads a volume in any supported format, sniffing the content rather than
// the extension, and enforces the expected registration dimensions.
inline Volume3D load_volume(const std::string& path, const Dims& expected_dims) {
    if (!std::filesystem::exists(path)) throw FileMissing("no such volume file: " + path);
    std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = detail::gunzip_file(path);

    Volume3D vol;
    if (bytes.size() >= sizeof(detail::kRawMagic) &&
        std::memcmp(bytes.data(), detail::kRawMagic, sizeof(detail::kRawMagic)) == 0) {
        vol = parse_volume_raw(bytes, path);
    } else {
        vol = parse_volume_nifti(bytes, path);
    }
    if (!(vol.dims == expected_dims))
        throw DimsMismatch("volume " + path + " has dims " + vol.dims.str() + ", expected " +
                           expected_dims.str() + " (wrong registration resolution?)");
    for (float s : vol.spacing_mm)
        if (!(s > 0.0f)) throw FormatError("non-positive voxel spacing in " + path);
    for (float x : vol.v)
        if (!std::isfinite(x)) throw FormatError("non-finite intensities in " + path);
    return vol;
}

}  // namespace gdsm
