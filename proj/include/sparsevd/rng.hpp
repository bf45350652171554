#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "sparsevd/tensor.hpp"

namespace sparsevd {

/// Deterministic counter-based PRNG: SplitMix64 (Steele, Lea & Flood 2014).
/// The state is a single 64-bit counter advanced by the golden-ratio gamma;
/// identical seeds and call sequences give identical integer streams on any
/// platform. Never shared between threads; callers split() or sequence it.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via the Box-Muller transform: one pair of uniforms
    /// yields a (cos, sin) pair of independent draws. Exactly two uniforms
    /// are consumed per output pair, so the stream position is a pure
    /// function of the number of pairs requested.
    std::pair<double, double> next_normal_pair() {
        double u1 = 1.0 - next_uniform(); // (0, 1], keeps the log finite
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(t), r * std::sin(t)};
    }

    double next_normal() { return next_normal_pair().first; }

    /// Derive an independent child stream; advances this state by one draw.
    RngState split() { return RngState(next_u64()); }

    std::uint64_t raw_state() const { return state_; }

    bool operator==(const RngState&) const = default;

private:
    std::uint64_t state_;
};

/// Tensor of i.i.d. N(0,1) entries. Fills in row-major order, consuming
/// Box-Muller pairs; for odd element counts the trailing sin draw is unused.
inline Tensor sample_standard_normal(const std::vector<std::size_t>& shape, RngState& rng) {
    Tensor out(shape);
    std::size_t n = out.numel();
    for (std::size_t i = 0; i + 1 < n; i += 2) {
        auto [z0, z1] = rng.next_normal_pair();
        out[i] = z0;
        out[i + 1] = z1;
    }
    if (n % 2 == 1) out[n - 1] = rng.next_normal_pair().first;
    return out;
}

} // namespace sparsevd
