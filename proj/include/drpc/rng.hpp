#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace drpc {

// Seeded random source with distributions implemented in-place so a given
// seed yields the same stream everywhere (std distributions are not
// portable across standard libraries).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per sample
    double normal(double mean = 0.0, double sd = 1.0) {
        constexpr double two_pi = 6.283185307179586476925286766559;
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
        return mean + sd * z;
    }

    // Exact Poisson sample. Knuth's product method applied to chunks of the
    // mean so exp(-lambda) never underflows for large rates.
    long poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        long total = 0;
        while (lambda > 30.0) {
            total += poisson_knuth(30.0);
            lambda -= 30.0;
        }
        total += poisson_knuth(lambda);
        return total;
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    // independent sub-stream; advances this generator by one draw
    Rng fork(std::uint64_t stream) {
        std::uint64_t x = (0x9e3779b97f4a7c15ULL * (stream + 1)) ^ gen_();
        return Rng(x);
    }

private:
    long poisson_knuth(double lambda) {
        double limit = std::exp(-lambda);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

    std::mt19937_64 gen_;
};

} // namespace drpc
