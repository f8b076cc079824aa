#pragma once

#include <cstdint>
#include <random>

namespace aai {

/// Deterministic random source. Only the raw mt19937_64 stream is used, with
/// explicit arithmetic on top, so identical seeds give identical values on
/// every platform (std::*_distribution is implementation-defined and avoided).
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in [-scale, scale).
    double symmetric(double scale) { return (uniform() * 2.0 - 1.0) * scale; }

    /// Uniform index in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    bool chance(double p) { return uniform() < p; }

private:
    std::mt19937_64 gen_;
};

}  // namespace aai
