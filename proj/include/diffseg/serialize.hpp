#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <vector>

#include "diffseg/layers.hpp"

namespace diffseg {

/// Appends a float as 4 little-endian bytes.
inline void append_f32_le(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xFF));
}

inline float read_f32_le(const std::uint8_t* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

inline std::uint32_t crc32_bytes(const std::vector<std::uint8_t>& bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.empty() ? nullptr : bytes.data(), static_cast<uInt>(bytes.size())));
}

/// Parameter values serialized as little-endian f32 in registry order.
template <typename T>
inline std::vector<std::uint8_t> param_payload(const std::vector<Param<T>*>& params) {
    std::vector<std::uint8_t> out;
    std::size_t total = 0;
    for (const Param<T>* p : params) total += p->size();
    out.reserve(total * 4);
    for (const Param<T>* p : params) {
        for (const T v : p->value) append_f32_le(out, static_cast<float>(v));
    }
    return out;
}

/// CRC32 of the f32 parameter payload: the run fingerprint used by training
/// reports and determinism checks.
template <typename T>
inline std::uint32_t param_checksum(const std::vector<Param<T>*>& params) {
    return crc32_bytes(param_payload(params));
}

}  // namespace diffseg
