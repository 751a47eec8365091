#pragma once

#include <bit>
#include <cstdint>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "pstnet/error.hpp"

namespace pstnet {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(
        ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

inline std::uint32_t crc32_of(std::string_view text) {
    return crc32_of({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ (b + 0x632be59bd9b4e019ULL));
}

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        buf_.insert(buf_.end(), raw, raw + sizeof(T));
    }

    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void put_checksum() { put(crc32_of(buf_)); }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > bytes_.size())
            throw FormatError(FormatError::Kind::corrupt, "unexpected end of data");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_bytes(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw FormatError(FormatError::Kind::corrupt, "unexpected end of data");
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

/// Verifies the trailing CRC-32 of a payload and returns the body span.
inline std::span<const std::uint8_t> checked_body(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < sizeof(std::uint32_t))
        throw FormatError(FormatError::Kind::checksum, "file too short for checksum");
    const auto body = bytes.first(bytes.size() - sizeof(std::uint32_t));
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
    if (stored != crc32_of(body))
        throw FormatError(FormatError::Kind::checksum, "checksum mismatch");
    return body;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_file_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Write-temp-then-rename so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<std::uint64_t> counter{0};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

#ifndef PSTNET_DATA_DIR
#define PSTNET_DATA_DIR "data"
#endif

/// Shipped data directory; PSTNET_DATA env var overrides the build-time path.
inline std::filesystem::path data_dir() {
    if (const char* env = std::getenv("PSTNET_DATA")) return env;
    return PSTNET_DATA_DIR;
}

}  // namespace pstnet
