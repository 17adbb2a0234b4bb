#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lora3d/errors.hpp"

namespace lora3d {

// Deterministic seeded random source.
//
// Generator: std::mt19937_64 (the 64-bit Mersenne Twister, whose output
// sequence is fully specified by the C++ standard, so streams are
// bit-identical across platforms and runs for the same seed).
// Uniform doubles take the high 53 bits of one raw draw; gaussians use the
// Box-Muller transform with both outputs consumed (two uniforms yield two
// samples, the second is cached), so the draw count per sample is fixed.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double gaussian(double mean, double stddev) {
        if (stddev < 0.0) throw ValueError("gaussian: negative stddev " + std::to_string(stddev));
        return mean + stddev * gaussian();
    }

    // Uniform integer in [0, n) via 128-bit multiply-shift (no rejection,
    // deterministic draw count).
    std::uint64_t uniform_below(std::uint64_t n) {
        if (n == 0) throw ValueError("uniform_below: n must be positive");
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent sub-stream seed from a base seed and a stream tag
// (SplitMix64 finalizer over seed + tag * golden gamma). Used to keep the
// backbone / adapter / head / shuffle / dropout streams independent so that
// e.g. disabling adapters does not shift the head initialization.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace lora3d
