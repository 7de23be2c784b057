// SPDX-License-Identifier: Apache-2.0
//
// Deterministic 64-bit PRNG (splitmix64). Every random draw in the project
// goes through this stream so results are reproducible across platforms.
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace dmoe {

struct PrngState {
    std::uint64_t state = 0;
};

// splitmix64 with the published constants. Pure transition: the returned
// state is the only thing that advances the stream.
inline std::pair<PrngState, std::uint64_t> prng_next(PrngState s) {
    std::uint64_t z = (s.state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return {s, z ^ (z >> 31)};
}

// Stateful convenience wrapper around prng_next.
class PrngStream {
public:
    explicit PrngStream(std::uint64_t seed) : state_{seed} {}
    explicit PrngStream(PrngState s) : state_{s} {}

    std::uint64_t next() {
        auto [s, out] = prng_next(state_);
        state_ = s;
        return out;
    }

    // Uniform in [0, 1).
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller. Consumes two draws per value; the
    // first uniform is shifted into (0, 1] so log never sees zero.
    double next_normal() {
        double u1 = static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    PrngState state() const { return state_; }

private:
    PrngState state_;
};

}  // namespace dmoe
