#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace hat {

// mt19937_64 output is fixed by the standard; the helpers below avoid the
// implementation-defined std:: distributions so draws are portable.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream derived from a run seed and a stream label (e.g. round index).
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
double uniform01(Rng& rng);

/// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Index drawn proportionally to `weights` (non-negative, positive sum).
std::size_t sample_categorical(Rng& rng, std::span<const double> weights);

}  // namespace hat
