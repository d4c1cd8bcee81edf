#include "t2lm/rng.hpp"

#include <cmath>

#include "t2lm/errors.hpp"

namespace t2lm {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n < 1) throw ValueError("uniform_int: n must be >= 1");
    // Lemire multiply-shift, no rejection: bias < 2^-64 * n, fine here.
    const auto x = next_u64();
    return static_cast<std::int64_t>(
        (static_cast<__uint128_t>(x) * static_cast<__uint128_t>(n)) >> 64);
}

double Rng::normal() {
    for (;;) {
        const double u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

Rng Rng::child(std::uint64_t stream) const {
    return Rng(mix64(state_ ^ mix64(stream + 0x1234567f00ddULL)));
}

}  // namespace t2lm
