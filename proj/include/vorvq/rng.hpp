#pragma once

// Seedable random stream with bit-exact results on every platform.
//
// mt19937_64 is fully specified by the C++ standard, but the standard
// library's distributions are not, so the uniform/normal transforms are
// spelled out here. The stream identifier is recorded in harness outputs.

#include <cmath>
#include <cstdint>
#include <random>

#include "vorvq/mat.hpp"

namespace vorvq {

class Rng {
  public:
    static constexpr const char* kStreamId = "mt19937_64.canonical53.boxmuller";

    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1), 53 random bits
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller; two uniforms consumed per draw, no
    // cached spare, so the stream position is a pure function of draw count
    double normal() {
        const double two_pi = 6.283185307179586476925286766559;
        double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // unbiased integer in [0, n) by rejection
    uint64_t below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

  private:
    std::mt19937_64 eng_;
};

inline Mat randn(Rng& rng, int rows, int cols, double stddev = 1.0) {
    Mat m(rows, cols);
    for (double& x : m.data) x = rng.normal() * stddev;
    return m;
}

}  // namespace vorvq
