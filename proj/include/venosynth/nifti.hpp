/* SPDX-License-Identifier: Apache-2.0 */
#pragma once

// Minimal NIfTI-1 reader/writer: single-file ".nii", uncompressed, no
// extensions, identity orientation, little-endian. Supports uint8, int16 and
// float32 scalar volumes.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "volume.hpp"

namespace venosynth::nifti {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline constexpr int kHeaderSize = 348;
inline constexpr int kVoxOffset = 352;

enum class Datatype : std::int16_t { Uint8 = 2, Int16 = 4, Float32 = 16 };

class NiftiError : public IoError {
public:
    enum class Kind { UnsupportedDatatype, MalformedHeader, TruncatedPayload, FileAccess };
    NiftiError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

template <class T>
struct DatatypeOf;
template <>
struct DatatypeOf<std::uint8_t> {
    static constexpr Datatype value = Datatype::Uint8;
};
template <>
struct DatatypeOf<std::int16_t> {
    static constexpr Datatype value = Datatype::Int16;
};
template <>
struct DatatypeOf<float> {
    static constexpr Datatype value = Datatype::Float32;
};

using AnyVolume = std::variant<Volume<std::uint8_t>, Volume<std::int16_t>, Volume<float>>;

/// Field offsets inside the 348-byte header.
namespace offset {
inline constexpr int sizeof_hdr = 0;
inline constexpr int regular = 38;
inline constexpr int dim = 40;
inline constexpr int datatype = 70;
inline constexpr int bitpix = 72;
inline constexpr int pixdim = 76;
inline constexpr int vox_offset = 108;
inline constexpr int scl_slope = 112;
inline constexpr int scl_inter = 116;
inline constexpr int xyzt_units = 123;
inline constexpr int descrip = 148;
inline constexpr int qform_code = 252;
inline constexpr int sform_code = 254;
inline constexpr int qoffset = 268;
inline constexpr int srow_x = 280;
inline constexpr int magic = 344;
}  // namespace offset

namespace detail {

template <class T>
void put(std::span<char> buf, int at, T v) {
    std::memcpy(buf.data() + at, &v, sizeof(T));
}
template <class T>
T get(std::span<const char> buf, int at) {
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    return v;
}

inline int bitpix_of(Datatype t) {
    switch (t) {
        case Datatype::Uint8: return 8;
        case Datatype::Int16: return 16;
        case Datatype::Float32: return 32;
    }
    return 0;
}

}  // namespace detail

/// Serializes the header + 4 zero extension bytes for a volume of type T.
template <class T>
std::vector<char> encode_header(const GridSpec& grid) {
    using detail::put;
    std::vector<char> buf(kVoxOffset, 0);
    std::span<char> b(buf);
    put<std::int32_t>(b, offset::sizeof_hdr, kHeaderSize);
    b[offset::regular] = 'r';
    const std::int16_t dim[8] = {3,
                                 static_cast<std::int16_t>(grid.dims[0]),
                                 static_cast<std::int16_t>(grid.dims[1]),
                                 static_cast<std::int16_t>(grid.dims[2]),
                                 1,
                                 1,
                                 1,
                                 1};
    for (int i = 0; i < 8; ++i) put<std::int16_t>(b, offset::dim + 2 * i, dim[i]);
    put<std::int16_t>(b, offset::datatype, static_cast<std::int16_t>(DatatypeOf<T>::value));
    put<std::int16_t>(b, offset::bitpix, static_cast<std::int16_t>(detail::bitpix_of(DatatypeOf<T>::value)));
    const float pixdim[8] = {1.0f,
                             static_cast<float>(grid.spacing[0]),
                             static_cast<float>(grid.spacing[1]),
                             static_cast<float>(grid.spacing[2]),
                             0.0f,
                             0.0f,
                             0.0f,
                             0.0f};
    for (int i = 0; i < 8; ++i) put<float>(b, offset::pixdim + 4 * i, pixdim[i]);
    put<float>(b, offset::vox_offset, static_cast<float>(kVoxOffset));
    put<float>(b, offset::scl_slope, 1.0f);
    b[offset::xyzt_units] = 3;  // NIFTI_UNITS_MICRON
    const char descrip[] = "venosynth";
    std::memcpy(buf.data() + offset::descrip, descrip, sizeof(descrip));
    put<std::int16_t>(b, offset::qform_code, 1);
    put<std::int16_t>(b, offset::sform_code, 1);
    for (int a = 0; a < 3; ++a) {
        put<float>(b, offset::qoffset + 4 * a, static_cast<float>(grid.origin[a]));
        for (int c = 0; c < 3; ++c)
            put<float>(b, offset::srow_x + 16 * a + 4 * c, a == c ? static_cast<float>(grid.spacing[a]) : 0.0f);
        put<float>(b, offset::srow_x + 16 * a + 12, static_cast<float>(grid.origin[a]));
    }
    std::memcpy(buf.data() + offset::magic, "n+1\0", 4);
    return buf;
}

template <class T>
void write_nifti(const Volume<T>& volume, const std::filesystem::path& path) {
    static_assert(std::is_same_v<T, std::uint8_t> || std::is_same_v<T, std::int16_t> || std::is_same_v<T, float>,
                  "NIfTI writer supports uint8, int16 and float32");
    volume.grid.validate();
    for (int d : volume.grid.dims)
        if (d > 32767) throw NiftiError(NiftiError::Kind::MalformedHeader, "dimension exceeds NIfTI-1 limit");
    if (volume.data.size() != volume.grid.voxel_count())
        throw ValidationError("volume payload does not match its grid");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw NiftiError(NiftiError::Kind::FileAccess, "cannot open for writing: " + path.string());
    const auto header = encode_header<T>(volume.grid);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(volume.data.data()),
              static_cast<std::streamsize>(volume.data.size() * sizeof(T)));
    if (!out) throw NiftiError(NiftiError::Kind::FileAccess, "write failed: " + path.string());
}

/// Parsed and checked header fields.
struct Header {
    Datatype datatype = Datatype::Uint8;
    GridSpec grid;
    std::size_t vox_offset = kVoxOffset;
    bool single_file = true;
};

inline Header decode_header(std::span<const char> buf) {
    using detail::get;
    using K = NiftiError::Kind;
    if (buf.size() < static_cast<std::size_t>(kHeaderSize))
        throw NiftiError(K::MalformedHeader, "file shorter than a NIfTI-1 header");
    const auto sizeof_hdr = get<std::int32_t>(buf, offset::sizeof_hdr);
    if (sizeof_hdr != kHeaderSize) {
        if (static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr))) == kHeaderSize)
            throw NiftiError(K::MalformedHeader, "big-endian NIfTI files are not supported");
        throw NiftiError(K::MalformedHeader, "sizeof_hdr is not 348");
    }
    const char* magic = buf.data() + offset::magic;
    Header h;
    if (std::memcmp(magic, "n+1\0", 4) == 0) {
        h.single_file = true;
    } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
        h.single_file = false;
    } else {
        throw NiftiError(K::MalformedHeader, "bad magic (expected \"n+1\" or \"ni1\")");
    }

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(buf, offset::dim + 2 * i);
    if (dim[0] < 1 || dim[0] > 7) throw NiftiError(K::MalformedHeader, "dim[0] out of range");
    for (int i = 1; i <= dim[0]; ++i)
        if (dim[i] < 1) throw NiftiError(K::MalformedHeader, "dim[" + std::to_string(i) + "] < 1");
    for (int i = 4; i <= dim[0]; ++i)
        if (dim[i] != 1) throw NiftiError(K::MalformedHeader, "only 3D scalar volumes are supported");
    for (int a = 0; a < 3; ++a) h.grid.dims[a] = (a + 1 <= dim[0]) ? dim[a + 1] : 1;

    const auto datatype = get<std::int16_t>(buf, offset::datatype);
    if (datatype != 2 && datatype != 4 && datatype != 16)
        throw NiftiError(K::UnsupportedDatatype, "unsupported datatype code " + std::to_string(datatype));
    h.datatype = static_cast<Datatype>(datatype);
    if (get<std::int16_t>(buf, offset::bitpix) != detail::bitpix_of(h.datatype))
        throw NiftiError(K::MalformedHeader, "bitpix does not match datatype");

    for (int a = 0; a < 3; ++a) {
        const float s = get<float>(buf, offset::pixdim + 4 * (a + 1));
        if (!(s > 0.0f) || !std::isfinite(s)) throw NiftiError(K::MalformedHeader, "pixdim must be positive");
        h.grid.spacing[a] = s;
        const float o = get<float>(buf, offset::qoffset + 4 * a);
        if (!std::isfinite(o)) throw NiftiError(K::MalformedHeader, "qoffset must be finite");
        h.grid.origin[a] = o;
    }

    const float vox = get<float>(buf, offset::vox_offset);
    if (!std::isfinite(vox) || vox < 0.0f || vox != std::floor(vox))
        throw NiftiError(K::MalformedHeader, "vox_offset must be a non-negative integer");
    if (h.single_file && vox < static_cast<float>(kVoxOffset))
        throw NiftiError(K::MalformedHeader, "vox_offset must be >= 352 for single-file NIfTI");
    h.vox_offset = static_cast<std::size_t>(vox);

    const float slope = get<float>(buf, offset::scl_slope);
    const float inter = get<float>(buf, offset::scl_inter);
    if (!(slope == 0.0f || (slope == 1.0f && inter == 0.0f)))
        throw NiftiError(K::MalformedHeader, "intensity scaling (scl_slope/scl_inter) is not supported");
    return h;
}

namespace detail {

inline std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NiftiError(NiftiError::Kind::FileAccess, "cannot open: " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

template <class T>
Volume<T> decode_payload(const Header& h, std::span<const char> bytes, std::size_t at) {
    Volume<T> v(h.grid);
    const std::size_t need = v.data.size() * sizeof(T);
    if (bytes.size() < at || bytes.size() - at < need)
        throw NiftiError(NiftiError::Kind::TruncatedPayload, "payload truncated: need " + std::to_string(need) +
                                                                 " bytes after offset " + std::to_string(at));
    std::memcpy(v.data.data(), bytes.data() + at, need);
    return v;
}

}  // namespace detail

inline AnyVolume read_nifti(const std::filesystem::path& path) {
    const auto bytes = detail::slurp(path);
    const Header h = decode_header(bytes);
    std::vector<char> payload_file;
    std::span<const char> payload(bytes);
    if (!h.single_file) {
        auto img = path;
        img.replace_extension(".img");
        payload_file = detail::slurp(img);
        payload = payload_file;
    }
    switch (h.datatype) {
        case Datatype::Uint8: return detail::decode_payload<std::uint8_t>(h, payload, h.vox_offset);
        case Datatype::Int16: return detail::decode_payload<std::int16_t>(h, payload, h.vox_offset);
        case Datatype::Float32: return detail::decode_payload<float>(h, payload, h.vox_offset);
    }
    throw NiftiError(NiftiError::Kind::UnsupportedDatatype, "unreachable datatype");
}

/// Reads a volume of any supported type and converts voxel values to T.
template <class T>
Volume<T> read_nifti_as(const std::filesystem::path& path) {
    return std::visit(
        [](auto&& src) {
            using S = typename std::decay_t<decltype(src.data)>::value_type;
            if constexpr (std::is_same_v<S, T>) {
                return Volume<T>(std::move(src));
            } else {
                Volume<T> out(src.grid);
                for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<T>(src.data[i]);
                return out;
            }
        },
        read_nifti(path));
}

/// Reads a binary mask; any nonzero voxel becomes foreground (1).
inline LabelVolume read_label(const std::filesystem::path& path) {
    return std::visit(
        [](auto&& src) {
            LabelVolume out(src.grid);
            for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = src.data[i] != 0 ? 1 : 0;
            return out;
        },
        read_nifti(path));
}

}  // namespace venosynth::nifti
