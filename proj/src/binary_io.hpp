#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "droughtcast/errors.hpp"

namespace droughtcast::detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    if constexpr (std::is_floating_point_v<T>) {
        static_assert(sizeof(T) == 4 || sizeof(T) == 8);
        using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
        put_le<U>(out, std::bit_cast<U>(v));
    } else {
        using U = std::make_unsigned_t<T>;
        auto u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
            u = static_cast<U>(u >> 8);
        }
    }
}

/// Sequential little-endian reader; running past the end throws CorruptionError.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        if constexpr (std::is_floating_point_v<T>) {
            using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
            return std::bit_cast<T>(get<U>());
        } else {
            need(sizeof(T));
            using U = std::make_unsigned_t<T>;
            U u = 0;
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                u = static_cast<U>(u | (static_cast<U>(bytes_[pos_ + i]) << (8 * i)));
            }
            pos_ += sizeof(T);
            return static_cast<T>(u);
        }
    }

    bool magic(const char (&tag)[5]) {
        if (bytes_.size() < pos_ + 4 || std::memcmp(bytes_.data() + pos_, tag, 4) != 0) {
            return false;
        }
        pos_ += 4;
        return true;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw CorruptionError("unexpected end of binary payload");
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace droughtcast::detail
