#pragma once

#include <cmath>
#include <cstdint>

namespace mdpmpc {

// Counter-based PRNG (splitmix64 core). Distributions are implemented by
// hand so that draws are identical across standard libraries and runs,
// which the reproducibility contracts require. Streams are derived by
// hashing (seed, stream ids), so independent rollouts never share state.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        return x;
    }

    // Independent substream, e.g. per (episode, step) or per multistart.
    Rng split(std::uint64_t stream) const { return Rng(mix(state_, stream)); }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { // in [0, n)
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller; one value per pair keeps the stream position simple.
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

  private:
    std::uint64_t state_;
};

} // namespace mdpmpc
