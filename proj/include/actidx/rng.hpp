#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace actidx {

// All randomness in the toolkit funnels through one 64-bit seed.  Streams
// for independent stages are derived by hashing (seed, tag, counter), so a
// stage can be re-run in isolation and still draw the same values.  The
// generator is splitmix64 and the distribution mappings are hand-rolled:
// std::* distributions are not bit-stable across standard libraries, and
// byte-identical reruns are part of the contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n); n must be > 0
    std::uint64_t next_below(std::uint64_t n) {
        // multiply-shift; bias is < 2^-64 per draw, irrelevant at our scales
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    // standard normal via Box-Muller (uncached: keeps draw order obvious)
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        // avoid log(0)
        u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

// Derives a named stream from the global seed: fnv1a(tag) mixed with seed
// and counter, then passed once through splitmix64 so the initial state is
// well dispersed.
inline Rng derive_rng(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= counter * 0xff51afd7ed558ccdULL;
    Rng warm(h);
    return Rng(warm.next_u64());
}

} // namespace actidx
