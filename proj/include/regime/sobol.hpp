#pragma once

#include "regime/core.hpp"

#include <cstdint>

namespace regime {

inline constexpr int kSobolMaxDimension = 32;

// First n points of the Sobol sequence in m dimensions (Joe-Kuo direction
// numbers), skipping the origin. A non-zero seed applies a digital shift:
// every coordinate's 32-bit integer representation is XOR-ed with a random
// word drawn from the seed. seed == 0 gives the plain sequence.
Matrix sobol_design(Eigen::Index n, int m, std::uint64_t seed);

}  // namespace regime
