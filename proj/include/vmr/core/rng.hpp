#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vmr {

// All randomness in the project flows through these helpers instead of
// std::*_distribution, whose output sequences differ between standard
// library implementations. mt19937_64 itself is fully specified, so a
// given seed yields the same corpus and the same training run everywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // modulo bias is negligible for span << 2^64 and keeps the draw portable
        return lo + static_cast<int64_t>(engine_() % span);
    }

    // Box-Muller; consumes two uniforms per pair, caches the second.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mean, double std) { return mean + std * gaussian(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// SplitMix64 finalizer, used to mix seeds with stream tags.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_str(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives an independent deterministic stream from a root seed and tags.
// Training uses (seed, purpose, counters) so that resuming from a
// checkpoint reconstructs the exact same streams from plain integers.
inline Rng stream_rng(uint64_t seed, const std::string& purpose, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = mix64(seed ^ mix64(hash_str(purpose)));
    h = mix64(h ^ mix64(a + 0x51ed2701));
    h = mix64(h ^ mix64(b + 0x9be112f3));
    return Rng(h);
}

}  // namespace vmr
