#pragma once

#include <cstdint>
#include <random>

namespace pdeseq {

/// SplitMix64 output mixer. Used to derive well-separated engine seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seed for trial `m` of a run with `base_seed`. Equals the (m+1)-th output
/// of a SplitMix64 stream started at base_seed, so trial streams are
/// independent of how many trials run or in which order.
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t m) {
    return mix64(base_seed + (m + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
/// Avoids std::uniform_real_distribution, whose output is
/// implementation-defined; this keeps sampled ICs replayable everywhere.
inline double uniform01(std::mt19937_64& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& engine, double lo, double hi) {
    return lo + (hi - lo) * uniform01(engine);
}

} // namespace pdeseq
