#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace orbit {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen because the whole generator is
// a dozen lines that behave identically on every platform, and because
// counter-based substreams fall out for free: `derive(seed, n)` opens an
// independent stream without consuming state, so per-image randomness does
// not depend on iteration order.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    // The n-th output of the stream rooted at `seed`, computed without
    // advancing any state. derive(s, n) == SplitMix64(s) advanced n+1 times.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t n) {
        return mix(seed + (n + 1) * kGamma);
    }

    std::uint64_t next() {
        state_ += kGamma;
        return mix(state_);
    }

    // Uniform in [0,1), 53 mantissa bits.
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    bool bernoulli(double p) {
        return uniform() < p;
    }

    // Standard normal via Box-Muller on SplitMix64 uniforms. The second
    // value of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] keeps the log finite.
        const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace orbit
