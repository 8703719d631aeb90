#ifndef CXR_RNG_HPP
#define CXR_RNG_HPP

// Deterministic random streams for reproducible experiments.
//
// A stream is a splitmix64 generator that remembers the seed it was created
// from. substream(k) derives a child stream from that seed and k alone, never
// from the current position, so the same (seed, k) pair always names the same
// stream regardless of how much the parent has been consumed. Distributions
// are implemented here rather than taken from <random> because the standard
// leaves their sequences implementation-defined.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cxr {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace detail

class rng_stream {
public:
    explicit rng_stream(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        return detail::mix64(z);
    }

    // Child stream addressed by index; independent of this stream's position.
    rng_stream substream(std::uint64_t index) const {
        return rng_stream(detail::mix64(seed_ ^ detail::mix64(index + 0x632be59bd9b4e019ull)));
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + next_unit() * (hi - lo); }

    bool bernoulli(double p) { return next_unit() < p; }

    // Uniform integer in [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("rng_stream::below: n must be positive");
        std::uint64_t x, r;
        do {
            x = next_u64();
            r = x % n;
        } while (x - r > std::uint64_t(0) - n);
        return r;
    }

    // Standard normal, Marsaglia polar method.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_unit() - 1.0;
            v = 2.0 * next_unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    // Gamma(shape, 1), Marsaglia-Tsang; shapes below 1 are boosted.
    double gamma(double shape) {
        if (shape <= 0.0) throw std::invalid_argument("rng_stream::gamma: shape must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            const double u = next_unit();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = next_unit();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        const double s = x + y;
        if (s <= 0.0) return 0.5;  // both gammas underflowed, astronomically rare
        return x / s;
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            using std::swap;
            swap(first[i - 1], first[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p.begin(), p.end());
        return p;
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cxr

#endif
