#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace sigmae {

/// Counter-based deterministic generator (splitmix64). Draws use integer
/// arithmetic only, so identical seeds give identical streams on any
/// platform. Streams are keyed by hashing a tuple of 64-bit words, which
/// keeps draws for (seed, epoch, image) independent without shared state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53 mantissa bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }

    /// Uniform double in [lo, hi).
    double next_range(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    /// Standard normal truncated to [-2, 2], via Box-Muller rejection.
    double next_trunc_normal();

private:
    std::uint64_t state_;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

/// Hash a key tuple into a stream seed. Order-sensitive.
inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6a09e667f3bcc908ULL;
    for (std::uint64_t p : parts) {
        h = detail::mix64(h ^ (p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    }
    return h;
}

inline double Rng::next_trunc_normal() {
    // Box-Muller; reject outside two standard deviations.
    for (;;) {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 <= 0.0) continue;
        double r = std::sqrt(-2.0 * std::log(u1));
        double z = r * std::cos(6.283185307179586 * u2);
        if (z >= -2.0 && z <= 2.0) return z;
    }
}

/// Vector of i.i.d. uniforms on [0, 1) from a fresh keyed stream.
inline std::vector<double> uniform_vector(std::uint64_t key, std::size_t n) {
    Rng rng(key);
    std::vector<double> out(n);
    for (auto& v : out) v = rng.next_unit();
    return out;
}

} // namespace sigmae
