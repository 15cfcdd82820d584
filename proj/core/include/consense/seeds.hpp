#pragma once

#include <cstdint>

namespace consense {

/// splitmix64 finalizer; decorrelates derived seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(a + mix_seed(b)); }

inline unsigned seed32(std::uint64_t a, std::uint64_t b) {
    return static_cast<unsigned>(mix_seed(a, b) >> 16);
}

}  // namespace consense
