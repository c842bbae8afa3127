// Copyright 2026 The bdp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>

namespace bdp {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG wrapper. All draws go through raw 64-bit output so the
// stream does not depend on libstdc++'s distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    // standard normal, Box-Muller without a cached spare (keeps state serializable)
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // independent substream derived from a root value and an index
    static Rng substream(uint64_t root, uint64_t index) {
        return Rng(splitmix64(root ^ splitmix64(index + 0x1234567ULL)));
    }

    friend std::ostream &operator<<(std::ostream &os, const Rng &r) { return os << r.gen_; }
    friend std::istream &operator>>(std::istream &is, Rng &r) { return is >> r.gen_; }

    bool operator==(const Rng &other) const { return gen_ == other.gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace bdp
