#pragma once

// Dense numeric kernels. The functions in aaud::kernels are the production
// versions (OpenMP over large inputs); aaud::kernels::serial holds the
// straightforward reference loops the tests and benchmarks compare against.
//
// Every parallel kernel is deterministic: reductions use a fixed block
// decomposition that does not depend on the thread count, and matvec computes
// each output row with the serial inner loop, so it is bitwise equal to the
// reference.

#include <cstddef>
#include <cstdint>
#include <span>

#include "aaud/matrix.hpp"

namespace aaud::kernels {

inline constexpr std::size_t kReductionBlock = 4096;
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out[i] = m.row(i) . x
void matvec(const Matrix& m, std::span<const double> x, std::span<double> out);

/// Number of sign assignments s in {0,1}^n whose doubled positive rank sum W
/// satisfies |2W - T| >= threshold, where T is the total of `ranks2`.
/// `ranks2` holds doubled (integer) signed-rank magnitudes; n <= 40.
std::uint64_t count_extreme_sign_assignments(std::span<const std::uint32_t> ranks2,
                                             std::uint64_t threshold);

namespace serial {

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void matvec(const Matrix& m, std::span<const double> x, std::span<double> out);
std::uint64_t count_extreme_sign_assignments(std::span<const std::uint32_t> ranks2,
                                             std::uint64_t threshold);

}  // namespace serial

}  // namespace aaud::kernels
