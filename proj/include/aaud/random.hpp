#pragma once

#include <cstdint>
#include <random>

#include "aaud/matrix.hpp"

namespace aaud {

using Rng = std::mt19937_64;

/// Engine for (seed, stream); distinct streams give independent sequences
/// for the same seed.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Vector standard_normal(std::size_t n, Rng& rng);

double uniform(double lo, double hi, Rng& rng);

}  // namespace aaud
