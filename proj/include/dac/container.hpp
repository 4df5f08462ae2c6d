#ifndef DAC_CONTAINER_HPP_INCLUDED
#define DAC_CONTAINER_HPP_INCLUDED

// On-disk container shared by every artifact the engine persists:
//
//   offset 0   8 bytes   ASCII magic, NUL padded (e.g. "DACEMB1\0")
//   offset 8   u32 LE    manifest length in bytes
//   offset 12  u32 LE    CRC-32 of the manifest bytes
//   offset 16  manifest  UTF-8 JSON, keys sorted, no whitespace
//   then       payload   blobs back to back, in manifest "blobs" order
//
// Every blob entry in the manifest carries name, dtype ("f32" or "f64"),
// element count and CRC-32 of its raw little-endian bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "dac/error.hpp"
#include "dac/linalg.hpp"

namespace dac {

using json = nlohmann::json;

inline constexpr std::uint32_t container_format_version = 1;
inline constexpr std::size_t container_header_bytes = 16;

enum class DType { f32, f64 };

inline std::size_t dtype_bytes(DType t) noexcept { return t == DType::f32 ? 4 : 8; }
inline const char* dtype_name(DType t) noexcept { return t == DType::f32 ? "f32" : "f64"; }

struct Blob {
    std::string name;
    DType dtype = DType::f64;
    std::vector<double> values;
};

struct Container {
    std::string magic; ///< 7 ASCII characters; the 8th byte on disk is NUL
    json manifest = json::object();
    std::vector<Blob> blobs;

    const Blob& blob(std::string_view name) const
    {
        for (const auto& b : blobs)
            if (b.name == name)
                return b;
        fail(ErrorKind::invariant_violation, "container has no blob named '" + std::string(name) + "'");
    }
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
        offset += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline std::vector<std::uint8_t> encode_blob(const Blob& b)
{
    std::vector<std::uint8_t> out;
    out.reserve(b.values.size() * dtype_bytes(b.dtype));
    for (double v : b.values) {
        if (b.dtype == DType::f32)
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        else
            put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline DType parse_dtype(const std::string& s)
{
    if (s == "f32")
        return DType::f32;
    if (s == "f64")
        return DType::f64;
    fail(ErrorKind::invariant_violation, "unknown blob dtype '" + s + "'");
}

} // namespace detail

inline std::vector<std::uint8_t> encode_container(const Container& c)
{
    if (c.magic.size() != 7)
        fail(ErrorKind::invariant_violation, "container magic must be 7 characters: '" + c.magic + "'");

    json manifest = c.manifest;
    manifest["format_version"] = container_format_version;
    json entries = json::array();
    std::vector<std::vector<std::uint8_t>> payloads;
    for (const auto& b : c.blobs) {
        payloads.push_back(detail::encode_blob(b));
        entries.push_back({{"name", b.name},
                           {"dtype", dtype_name(b.dtype)},
                           {"count", b.values.size()},
                           {"crc32", crc32_of(payloads.back())}});
    }
    manifest["blobs"] = std::move(entries);

    const std::string text = manifest.dump();
    std::vector<std::uint8_t> out;
    out.insert(out.end(), c.magic.begin(), c.magic.end());
    out.push_back(0);
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    const std::span<const std::uint8_t> text_bytes(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                   text.size());
    detail::put_u32(out, crc32_of(text_bytes));
    out.insert(out.end(), text_bytes.begin(), text_bytes.end());
    for (const auto& p : payloads)
        out.insert(out.end(), p.begin(), p.end());
    return out;
}

/// Decodes a container and checks magic, version and every checksum.
/// Magics sharing the first six characters but differing in the version
/// digit are reported as VersionMismatch rather than BadMagic.
inline Container decode_container(std::span<const std::uint8_t> bytes, std::string_view expected_magic)
{
    const std::string_view family = expected_magic.substr(0, 6);
    const auto prefix = [&](std::size_t n) {
        return std::string_view(reinterpret_cast<const char*>(bytes.data()), std::min(n, bytes.size()));
    };
    if (bytes.size() < 8) {
        if (!expected_magic.starts_with(prefix(bytes.size())) || bytes.empty())
            fail(ErrorKind::bad_magic, "file too short to hold a magic");
        fail(ErrorKind::checksum_fail, "file truncated inside the header");
    }
    const std::string_view magic = prefix(7);
    if (magic != expected_magic || bytes[7] != 0) {
        if (magic.substr(0, 6) == family && bytes[7] == 0)
            fail(ErrorKind::version_mismatch,
                 "expected " + std::string(expected_magic) + ", found " + std::string(magic));
        fail(ErrorKind::bad_magic, "expected magic " + std::string(expected_magic));
    }
    if (bytes.size() < container_header_bytes)
        fail(ErrorKind::checksum_fail, "file truncated inside the header");

    const std::uint32_t manifest_len = detail::get_u32(bytes.data() + 8);
    const std::uint32_t manifest_crc = detail::get_u32(bytes.data() + 12);
    if (bytes.size() - container_header_bytes < manifest_len)
        fail(ErrorKind::checksum_fail, "file truncated inside the manifest");
    const auto manifest_bytes = bytes.subspan(container_header_bytes, manifest_len);
    if (crc32_of(manifest_bytes) != manifest_crc)
        fail(ErrorKind::checksum_fail, "manifest checksum mismatch");

    Container c;
    c.magic = std::string(magic);
    try {
        c.manifest = json::parse(manifest_bytes.begin(), manifest_bytes.end());
    } catch (const json::exception& e) {
        fail(ErrorKind::checksum_fail, std::string("manifest is not valid JSON: ") + e.what());
    }

    try {
        const auto version = c.manifest.at("format_version").get<std::uint32_t>();
        if (version != container_format_version)
            fail(ErrorKind::version_mismatch, "format_version " + std::to_string(version) + ", expected "
                                                  + std::to_string(container_format_version));

        std::size_t offset = container_header_bytes + manifest_len;
        const auto& entries = c.manifest.at("blobs");
        std::size_t expected_end = offset;
        for (const auto& e : entries) {
            const DType t = detail::parse_dtype(e.at("dtype").get<std::string>());
            expected_end += e.at("count").get<std::size_t>() * dtype_bytes(t);
        }
        if (expected_end != bytes.size())
            fail(ErrorKind::checksum_fail, "payload is " + std::to_string(bytes.size() - offset)
                                               + " bytes, manifest describes "
                                               + std::to_string(expected_end - offset));

        for (const auto& e : entries) {
            Blob b;
            b.name = e.at("name").get<std::string>();
            b.dtype = detail::parse_dtype(e.at("dtype").get<std::string>());
            const auto count = e.at("count").get<std::size_t>();
            const std::size_t width = dtype_bytes(b.dtype);
            const auto raw = bytes.subspan(offset, count * width);
            if (crc32_of(raw) != e.at("crc32").get<std::uint32_t>())
                fail(ErrorKind::checksum_fail, "blob '" + b.name + "' checksum mismatch");
            b.values.resize(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::uint8_t* p = raw.data() + i * width;
                b.values[i] = b.dtype == DType::f32
                                  ? static_cast<double>(std::bit_cast<float>(detail::get_u32(p)))
                                  : std::bit_cast<double>(detail::get_u64(p));
            }
            offset += count * width;
            c.blobs.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::invariant_violation, std::string("malformed manifest: ") + e.what());
    }
    c.manifest.erase("blobs");
    c.manifest.erase("format_version");
    return c;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::io_error, "cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::io_error, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorKind::io_error, "short write to '" + path.string() + "'");
}

inline void write_container(const Container& c, const std::filesystem::path& path)
{
    write_file_bytes(path, encode_container(c));
}

inline Container read_container(const std::filesystem::path& path, std::string_view expected_magic)
{
    const auto bytes = read_file_bytes(path);
    return decode_container(bytes, expected_magic);
}

/// Reads the 7-character magic of a file without validating the rest.
inline std::string peek_magic(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::io_error, "cannot open '" + path.string() + "' for reading");
    char buf[8] = {};
    in.read(buf, 8);
    return std::string(buf, strnlen(buf, 7));
}

inline void write_json(const std::filesystem::path& path, const json& j)
{
    const std::string text = j.dump(2) + "\n";
    write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

} // namespace dac

#endif // DAC_CONTAINER_HPP_INCLUDED
