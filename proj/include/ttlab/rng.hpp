#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace ttlab {

// Deterministic, platform-independent randomness. Two flavours:
//
//  * StreamRng   — sequential splitmix64 stream (weight init, shuffles).
//  * CounterRng  — stateless counter-based generator; draw j of phase p at
//                  step i is a pure function of (key, p, i, j). Attacks use
//                  this so a 300-iteration run and a 100-iteration run with
//                  the same seed consume identical randomness per iteration.
//
// No <random> distributions anywhere: their output is implementation-defined
// and would break byte-identical reruns across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// One-shot avalanche of a single word.
inline std::uint64_t mix64(std::uint64_t x) {
    return splitmix64(x);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return mix64(a + 0x9e3779b97f4a7c15ULL * (b + 1));
}

// Stable string hash; std::hash is implementation defined.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class StreamRng {
public:
    explicit StreamRng(std::uint64_t seed) : state_(mix64(seed)) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float next_float() {
        return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    }

    // Uniform in [lo, hi).
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Uniform integer in [0, n). Multiply-high avoids modulo bias.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(mix64(key)) {}

    std::uint64_t word(std::uint64_t phase, std::uint64_t step, std::uint64_t draw) const {
        return mix64(hash_combine(hash_combine(key_, phase), hash_combine(step, draw)));
    }

    double u01(std::uint64_t phase, std::uint64_t step, std::uint64_t draw) const {
        return static_cast<double>(word(phase, step, draw) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n, std::uint64_t phase, std::uint64_t step,
                        std::uint64_t draw) const {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(word(phase, step, draw)) * n) >> 64);
    }

    // Standard normal via Box-Muller; consumes draws (2k, 2k+1).
    float gaussian(std::uint64_t phase, std::uint64_t step, std::uint64_t pair) const {
        double u1 = u01(phase, step, 2 * pair);
        double u2 = u01(phase, step, 2 * pair + 1);
        if (u1 < 1e-300) u1 = 1e-300;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(2.0 * std::numbers::pi * u2));
    }

private:
    std::uint64_t key_;
};

}  // namespace ttlab
