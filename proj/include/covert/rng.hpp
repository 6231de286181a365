// Seeded random source used across all simulations. Every run owns its own
// Rng; generators for sub-tasks are derived with substream() so multi-run
// experiments stay reproducible no matter how work is scheduled.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace covert {

namespace detail {
// splitmix64, decorrelates seed/stream pairs before feeding mt19937_64
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace detail

class Rng {
  public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : base_(seed), engine_(detail::mix64(detail::mix64(seed) ^ detail::mix64(stream))) {}

    /// Independent generator for a sub-task (rollout index, run index, ...).
    Rng substream(std::uint64_t stream) const { return Rng(base_, stream + 1); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (no cached spare; keeps streams simple).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Index sampled from an (unnormalized) weight vector.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) throw std::invalid_argument("categorical: nonpositive total weight");
        double r = uniform() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            r -= weights[i];
            if (r < 0.0) return i;
        }
        return weights.size() - 1;
    }

  private:
    std::uint64_t base_;
    std::mt19937_64 engine_;
};

} // namespace covert
