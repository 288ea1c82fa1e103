#pragma once

// Seeded pseudo-randomness with a fully specified recurrence so that runs
// reproduce bit-for-bit on any platform. std::mt19937 engines are portable
// but the standard distributions are not, so both the generator and the
// distributions are spelled out here.
//
// Generator: xoshiro256++ (Blackman & Vigna, 2019).
//   state: s[0..3], 64-bit each, seeded by four successive splitmix64 steps.
//   output: rotl(s[0] + s[3], 23) + s[0]
//   update: t = s[1] << 17; s[2]^=s[0]; s[3]^=s[1]; s[1]^=s[2]; s[0]^=s[3];
//           s[2]^=t; s[3] = rotl(s[3], 45)
// Doubles in [0,1) take the top 53 bits; gaussians use Box-Muller with a
// cached spare; shuffles are Fisher-Yates with rejection-free modulo bias
// accepted at desk scale (ranges are tiny next to 2^64).

#include <array>
#include <cstdint>
#include <cmath>
#include <vector>

#include "opera/errors.hpp"

namespace opera {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl64(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
}

}  // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& s : state_) s = detail::splitmix64(sm);
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl64(state_[3], 45);
        return result;
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw DomainError("Rng::below(0)");
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; the second draw is cached.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double gauss(double mu, double sigma) { return mu + sigma * gauss(); }

    std::vector<double> gauss_vector(std::size_t n, double mu = 0.0, double sigma = 1.0) {
        std::vector<double> v(n);
        for (auto& x : v) x = gauss(mu, sigma);
        return v;
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // Deterministic child seed; lets independent trials draw from
    // independent streams in a reproducible way.
    static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
        std::uint64_t x = base ^ (0x632be59bd9b4e019ULL + index * 0x9e3779b97f4a7c15ULL);
        return detail::splitmix64(x);
    }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace opera
