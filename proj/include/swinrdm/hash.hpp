#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace swinrdm {

/// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string hash_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

} // namespace swinrdm
