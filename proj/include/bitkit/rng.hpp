#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bitkit/error.hpp"

namespace bitkit {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic RNG with hand-rolled distributions so that streams are
// reproducible across standard library implementations. Substreams are
// derived by hashing (seed, stream id) so parallel consumers never share
// state.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    static Rng substream(uint64_t seed, uint64_t stream) {
        return Rng(splitmix64(seed ^ splitmix64(stream)));
    }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double log_uniform(double lo, double hi) {
        if (lo <= 0 || hi <= lo) throw ValidationError("log_uniform requires 0 < lo < hi");
        return std::exp(uniform(std::log(lo), std::log(hi)));
    }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw ValidationError("uniform_int(0)");
        // rejection sampling to avoid modulo bias
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Marsaglia polar method with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Beta(a, b) via Johnk's algorithm; efficient for the small shape
    // parameters MixUp uses (acceptance probability ~0.99 at a=b=0.1).
    double beta(double a, double b) {
        if (a <= 0 || b <= 0) throw ValidationError("beta requires positive shape parameters");
        while (true) {
            double x = std::pow(uniform(), 1.0 / a);
            double y = std::pow(uniform(), 1.0 / b);
            if (x + y > 0.0 && x + y <= 1.0) return x / (x + y);
        }
    }

    // Fisher-Yates shuffle of [0, n) index vector.
    template <typename Int>
    void shuffle(std::vector<Int>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bitkit
