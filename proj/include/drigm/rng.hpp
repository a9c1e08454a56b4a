#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace drigm {

/// Seeded random source with platform-independent draws.
///
/// The standard distribution classes leave their algorithms
/// implementation-defined, so uniform/gaussian draws are derived directly
/// from the mt19937_64 bit stream. Same seed, same sequence, everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % static_cast<std::uint64_t>(n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<int>(x % static_cast<std::uint64_t>(n));
    }

    /// Standard normal via Box-Muller (no cached spare, keeps the stream simple).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    /// Index drawn from a discrete distribution given by `probs` (sums to 1).
    template <typename Container>
    int categorical(const Container& probs) {
        const double u = uniform();
        double acc = 0.0;
        int last = 0;
        int i = 0;
        for (const double p : probs) {
            acc += p;
            if (u < acc) return i;
            if (p > 0.0) last = i;
            ++i;
        }
        return last;  // guard against accumulated rounding
    }

    /// Derive an independent child stream (for per-component seeding).
    Rng split() { return Rng(gen_() ^ 0x9e3779b97f4a7c15ULL); }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace drigm
