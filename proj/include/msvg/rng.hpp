#pragma once

#include <cfloat>
#include <cmath>
#include <cstdint>
#include <random>

namespace msvg {

// SplitMix64 output mixer; used to derive well-separated engine seeds from
// (seed, coordinate...) tuples.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random stream. The mt19937_64 core is bit-exact across
// standard library implementations, and all variate transformations below are
// implemented here rather than through std:: distributions (whose algorithms
// are implementation-defined), so identical seeds give identical streams on
// any conforming platform.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    // Independent stream addressed by up to three coordinates, e.g.
    // (nu-index, n-index, replicate-index) under a study master seed.
    static RngStream substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                               std::uint64_t c = 0) {
        std::uint64_t s = seed;
        std::uint64_t h = splitmix64_next(s);
        s ^= a + 0x9e3779b97f4a7c15ULL;
        h ^= splitmix64_next(s);
        s ^= b + 0xbf58476d1ce4e5b9ULL;
        h ^= splitmix64_next(s);
        s ^= c + 0x94d049bb133111ebULL;
        h ^= splitmix64_next(s);
        return RngStream(h);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on the open interval (0, 1); never returns 0 or 1, so logs and
    // inversions are always finite.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller, caching the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Gamma(shape, scale 1) via Marsaglia-Tsang squeeze/rejection; shapes
    // below 1 use the boosting identity G(a) = G(a+1) * U^(1/a). The result
    // is clamped away from exact zero so downstream 1/lambda and log(lambda)
    // stay finite.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            const double boost = std::pow(uniform01(), 1.0 / shape);
            const double v = g * boost;
            return v > DBL_MIN ? v : DBL_MIN;
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
            const double u = uniform01();
            const double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace msvg
