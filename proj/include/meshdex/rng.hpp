#pragma once

#include <cstdint>
#include <random>

namespace meshdex {

/// Seeded generator with platform-independent draws. The standard library
/// distributions are implementation-defined, so bounded integers and unit
/// reals are derived from raw mt19937_64 output here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). Rejection sampling removes modulo bias.
    std::uint64_t uniform_index(std::uint64_t n)
    {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform real in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

}  // namespace meshdex
