#pragma once

#include <cstdint>

namespace t2lm {

// Seedable counter-based generator (splitmix64 core). The same seed yields
// the same draw sequence on every platform; child generators are independent
// streams derived from the parent state without advancing it.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [0, n), n >= 1.
    std::int64_t uniform_int(std::int64_t n);

    // Standard normal via the polar method (no trig, stable across libms).
    double normal();
    double normal(double mean, double stddev);

    Rng child(std::uint64_t stream) const;

  private:
    std::uint64_t state_;
};

}  // namespace t2lm
