#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace tleap {

/// Deterministic splitmix64 generator. Used instead of <random> engines so
/// that seeds reproduce bit-identical streams on every platform and build.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

/// Mixes a tuple of values into one seed. Used to derive independent
/// per-(epoch, sample) streams from a base seed.
inline uint64_t mix_seed(uint64_t a) {
    Rng r(a);
    return r.next_u64();
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    Rng r(a ^ (b * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL));
    return r.next_u64();
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

/// Pinned FNV-1a string hash (std::hash is implementation-defined, which
/// would make seeded splits differ across standard libraries).
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace tleap
