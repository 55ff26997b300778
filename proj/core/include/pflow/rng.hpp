#pragma once

#include <cstdint>
#include <random>

#include "pflow/vec3.hpp"

namespace pflow {

/// Seeded RNG used everywhere randomness is needed. Wraps mt19937_64 but
/// derives floating-point values from raw bits directly so sequences do not
/// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        // Modulo bias is irrelevant for the index ranges used here.
        return n == 0 ? 0 : gen_() % n;
    }

    template <class T>
    Vec3T<T> uniform_vec3(T lo, T hi) {
        return {static_cast<T>(uniform(lo, hi)), static_cast<T>(uniform(lo, hi)),
                static_cast<T>(uniform(lo, hi))};
    }

    /// Derive an independent child stream (e.g. one per scene).
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL));
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace pflow
