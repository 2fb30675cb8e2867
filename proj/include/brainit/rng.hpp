#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace brainit {

/// Deterministic RNG. The uniform/normal transforms are implemented here
/// rather than via std:: distributions, whose output is implementation
/// defined; results must reproduce bitwise for a fixed seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent stream, e.g. per epoch or per sample.
    Rng fork(std::uint64_t stream) const { return Rng(seed_mix(seed_, stream)); }

    static Rng with_stream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(seed_mix(seed, stream));
    }

private:
    static std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 round over a xor-folded pair
        std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
    std::uint64_t seed_ = 0;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace brainit
