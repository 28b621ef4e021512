#pragma once

#include <cmath>
#include <cstdint>

namespace ogs {

// Counter-based 64-bit generator. The i-th output is a pure function of
// (seed, i), so streams are reproducible across platforms and can be split
// by offsetting the counter. Output function is the SplitMix64 finalizer:
//
//   out(i) = mix(seed + (i + 1) * 0x9E3779B97F4A7C15)
//
// which makes next_u64() from a fresh CounterRng(seed) emit exactly the
// reference SplitMix64 sequence. Test vectors (seed = 0):
//   0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F
class CounterRng {
public:
    explicit CounterRng(uint64_t seed, uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        ++counter_;
        return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift map; bias is O(n / 2^64).
    uint64_t uniform_index(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller. Consumes two draws per call; no caching so the draw
    // count stays a pure function of the call sequence.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    // Independent substream: hash the parent seed with a stream id.
    CounterRng fork(uint64_t stream) const {
        return CounterRng(mix(seed_ ^ mix(stream + 0x5851F42D4C957F2Dull)));
    }

private:
    uint64_t seed_;
    uint64_t counter_;
};

} // namespace ogs
