#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace jumpctl {

// SplitMix64: portable 64-bit generator with cheap, collision-resistant
// substream derivation. Sequences are bit-reproducible across runs of one
// build for a given (seed, domain, id) triple, which is the determinism
// contract for sampled paths, noise draws and simulation trials.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via Box-Muller; the spare is cached so consecutive
    // draws from one stream cost one transform per pair.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Index into a cumulative categorical distribution given row weights.
    template <typename RowLike>
    int categorical(const RowLike& weights, int count) {
        const double u = uniform01();
        double acc = 0.0;
        for (int i = 0; i < count; ++i) {
            acc += weights(i);
            if (u < acc) return i;
        }
        return count - 1;
    }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        Rng g(a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2)));
        return g.next_u64();
    }

    // Independent substream for (seed, domain, id); domains keep trial
    // streams, path streams and noise streams from colliding.
    static Rng substream(std::uint64_t seed, std::uint64_t domain, std::uint64_t id) {
        return Rng(mix(mix(seed, domain), id));
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace rng_domain {
inline constexpr std::uint64_t kModePath = 0x11;
inline constexpr std::uint64_t kPlantNoise = 0x22;
inline constexpr std::uint64_t kTrial = 0x33;
inline constexpr std::uint64_t kGainSearch = 0x44;
} // namespace rng_domain

} // namespace jumpctl
