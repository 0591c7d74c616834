#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gctnet {

// Deterministic random source. The raw engine is std::mt19937_64; all
// derived draws (uniform, normal, ints) are implemented by hand so the
// produced streams do not depend on the standard library's distribution
// implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; the spare value is cached, so draws
    // come in a fixed order.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derive an independent child stream from the construction seed and a
    // stream id (splitmix64 finalizer). Forking does not advance this engine.
    Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 eng_;
    std::uint64_t seed_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gctnet
