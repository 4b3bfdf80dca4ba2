#pragma once

// Counter-based deterministic random streams.  A stream is keyed by
// (seed, example id, purpose tag) so that every consumer draws from its own
// reproducible sequence regardless of thread schedule or evaluation order.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>

namespace xgpt {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace detail

class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t example_id, std::string_view purpose) {
        std::uint64_t s = seed;
        std::uint64_t a = detail::splitmix64(s);
        s ^= example_id * 0x9e3779b97f4a7c15ull;
        std::uint64_t b = detail::splitmix64(s);
        state_ = a ^ (b + detail::fnv1a64(purpose));
        has_spare_gaussian_ = false;
        spare_gaussian_ = 0.0;
    }

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).  Rejection sampling keeps the draw unbiased
    // and platform-independent.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("RngStream::next_below: n must be positive");
        const std::uint64_t limit = ~0ull - ~0ull % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double next_gaussian() {
        if (has_spare_gaussian_) {
            has_spare_gaussian_ = false;
            return spare_gaussian_;
        }
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_gaussian_ = r * std::sin(theta);
        has_spare_gaussian_ = true;
        return r * std::cos(theta);
    }

    // Knuth's product-of-uniforms method; exact for the small rates used here.
    std::uint64_t next_poisson(double lambda) {
        if (!(lambda > 0.0)) throw std::invalid_argument("RngStream::next_poisson: lambda must be positive");
        const double threshold = std::exp(-lambda);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= next_double();
        } while (p > threshold);
        return k - 1;
    }

private:
    std::uint64_t state_;
    bool has_spare_gaussian_;
    double spare_gaussian_;
};

} // namespace xgpt
