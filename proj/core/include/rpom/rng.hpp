#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rpom {

/// Seeded generator wrapper. All randomness in the library flows through this
/// class so that a fixed seed yields bitwise-identical results everywhere:
/// std::mt19937_64 has a standard-mandated output sequence, and the floating
/// conversions below avoid the implementation-defined std::*_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (deterministic, two u64 draws per pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(6.283185307179586476925286766559 * u2);
        have_spare_ = true;
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform index in [0, n). Rejection sampling keeps it unbiased.
    std::size_t index(std::size_t n) {
        if (n <= 1) return 0;
        std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace rpom
