#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace groundqa {

// splitmix64 step; good avalanche behaviour for cheap seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives a child seed from a master seed and a list of stream tags, so that
// independent consumers (splits, instances, epochs) get decorrelated streams
// without sharing generator state.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = master;
    splitmix64(s);
    for (std::uint64_t t : tags) {
        s ^= 0x632BE59BD9B4E019ULL + t;
        splitmix64(s);
        s += t * 0x9E3779B97F4A7C15ULL;
    }
    std::uint64_t out = s;
    return splitmix64(out);
}

// Thin wrapper around mt19937_64 with the distributions used across the
// library. Keeping them behind one type makes determinism audits easy: every
// random draw in the codebase goes through this class.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    double uniform() { return unit_(engine_); }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * unit_(engine_);
    }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return mean + stddev * normal_(engine_);
    }

    // Standard Gumbel(0, 1) sample via inverse CDF of a clamped uniform; the
    // clamp keeps log(-log(u)) finite at the interval edges.
    double gumbel() {
        double u = unit_(engine_);
        if (u < 1e-12) u = 1e-12;
        if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
        return -std::log(-std::log(u));
    }

    // Beta(a, b) as the standard two-gamma ratio.
    double beta(double a, double b) {
        std::gamma_distribution<double> ga(a, 1.0);
        std::gamma_distribution<double> gb(b, 1.0);
        double x = ga(engine_);
        double y = gb(engine_);
        double s = x + y;
        if (s <= 0.0) return 0.5;
        return x / s;
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace groundqa
