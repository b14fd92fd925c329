#pragma once

// Bit-reproducible random numbers. The engine is std::mt19937_64, whose
// output sequence is fixed by the C++ standard; the conversions to uniform and
// normal variates are spelled out here because the standard distributions are
// implementation-defined.

#include <cmath>
#include <cstdint>
#include <random>

namespace mvmotion {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via the basic Box-Muller transform (one variate per
    /// call, two uniforms consumed).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace mvmotion
