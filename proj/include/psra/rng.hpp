#pragma once

#include <cstdint>
#include <random>

namespace psra {

// Deterministic RNG wrapper. The mt19937_64 engine output is pinned by the
// standard; the uniform/normal mappings below are ours, so streams are
// reproducible across compilers (std::*_distribution is not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t u64() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (cached second value)
    double normal();

    std::size_t index(std::size_t n) {
        // rejection-free modulo is fine at desk scale; bias < 2^-53
        return static_cast<std::size_t>(u64() % static_cast<std::uint64_t>(n));
    }

    // Counter-based stream derivation: independent child generator for
    // (seed, stream). Used to give batch samples / Monte Carlo trials their
    // own deterministic streams regardless of evaluation order.
    static Rng split(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 eng_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// splitmix64 mix step, also used for seed derivation elsewhere
std::uint64_t mix64(std::uint64_t x);

}  // namespace psra
