#include "aaud/kernels.hpp"

#include <bit>
#include <cmath>
#include <vector>

#include "aaud/error.hpp"

namespace aaud::kernels {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) fail(ErrorCode::shape, std::string(what) + ": length mismatch");
}

std::uint64_t abs_diff(std::uint64_t a, std::uint64_t b) { return a > b ? a - b : b - a; }

constexpr std::size_t kMaxSignedRanks = 40;

}  // namespace

// ---------------------------------------------------------------------------
// reference loops

namespace serial {

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  require_same_size(m.cols(), x.size(), "matvec");
  require_same_size(m.rows(), out.size(), "matvec");
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x);
}

std::uint64_t count_extreme_sign_assignments(std::span<const std::uint32_t> ranks2,
                                             std::uint64_t threshold) {
  const std::size_t n = ranks2.size();
  if (n > kMaxSignedRanks) fail(ErrorCode::domain, "sign enumeration limited to 40 ranks");
  std::uint64_t total = 0;
  for (auto r : ranks2) total += r;
  std::uint64_t count = 0;
  const std::uint64_t masks = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < masks; ++mask) {
    std::uint64_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask >> j & 1U) w += ranks2[j];
    }
    if (abs_diff(2 * w, total) >= threshold) ++count;
  }
  return count;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// production kernels

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  const std::size_t n = a.size();
  if (n < kParallelThreshold) return serial::dot(a, b);

  const std::size_t blocks = (n + kReductionBlock - 1) / kReductionBlock;
  std::vector<double> partial(blocks, 0.0);
  const auto nb = static_cast<std::ptrdiff_t>(blocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t blk = 0; blk < nb; ++blk) {
    const std::size_t lo = static_cast<std::size_t>(blk) * kReductionBlock;
    const std::size_t hi = std::min(n, lo + kReductionBlock);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += a[i] * b[i];
    partial[static_cast<std::size_t>(blk)] = s;
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  require_same_size(m.cols(), x.size(), "matvec");
  require_same_size(m.rows(), out.size(), "matvec");
  const auto rows = static_cast<std::ptrdiff_t>(m.rows());
  const bool big = m.rows() > 1 && m.rows() * m.cols() >= kParallelThreshold;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (big)
#endif
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto r = m.row(static_cast<std::size_t>(i));
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    out[static_cast<std::size_t>(i)] = s;
  }
  (void)big;
}

std::uint64_t count_extreme_sign_assignments(std::span<const std::uint32_t> ranks2,
                                             std::uint64_t threshold) {
  const std::size_t n = ranks2.size();
  if (n > kMaxSignedRanks) fail(ErrorCode::domain, "sign enumeration limited to 40 ranks");
  if (n <= 12) return serial::count_extreme_sign_assignments(ranks2, threshold);

  std::uint64_t total = 0;
  for (auto r : ranks2) total += r;

  // The top `split` ranks select a chunk; the remaining `low` ranks are walked
  // in Gray-code order so each step flips exactly one sign.
  const std::size_t split = std::min<std::size_t>(8, n);
  const std::size_t low = n - split;
  const auto chunks = static_cast<std::ptrdiff_t>(std::uint64_t{1} << split);
  const std::uint64_t steps = std::uint64_t{1} << low;

  std::uint64_t count = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) reduction(+ : count)
#endif
  for (std::ptrdiff_t chunk = 0; chunk < chunks; ++chunk) {
    std::uint64_t w = 0;
    for (std::size_t j = 0; j < split; ++j) {
      if (static_cast<std::uint64_t>(chunk) >> j & 1U) w += ranks2[low + j];
    }
    std::uint64_t local = abs_diff(2 * w, total) >= threshold ? 1 : 0;
    std::uint64_t state = 0;
    for (std::uint64_t i = 1; i < steps; ++i) {
      const int bit = std::countr_zero(i);
      const std::uint64_t flag = std::uint64_t{1} << bit;
      state ^= flag;
      if (state & flag) {
        w += ranks2[static_cast<std::size_t>(bit)];
      } else {
        w -= ranks2[static_cast<std::size_t>(bit)];
      }
      if (abs_diff(2 * w, total) >= threshold) ++local;
    }
    count += local;
  }
  return count;
}

}  // namespace aaud::kernels
