#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aaud::parallel {

int max_threads() noexcept;
void set_threads(int n) noexcept;

/// Applies AAUD_THREADS when set to a positive integer. Returns the value
/// applied, or 0 when the variable is absent or invalid.
int configure_from_env() noexcept;

/// Runs f(i) for i in [0, n). Exceptions are captured per index and the one
/// with the lowest index is rethrown after the loop, so failures are
/// reported identically regardless of thread count.
template <class F>
void for_each_index(std::size_t n, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) if (n > 1)
#endif
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Ordered parallel map: result[i] = f(i).
template <class R, class F>
std::vector<R> map(std::size_t n, F&& f) {
  std::vector<R> out(n);
  for_each_index(n, [&](std::size_t i) { out[i] = f(i); });
  return out;
}

}  // namespace aaud::parallel
