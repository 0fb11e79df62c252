#include "doctest.h"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "aaud/kernels.hpp"
#include "aaud/parallel.hpp"
#include "aaud/random.hpp"

using namespace aaud;

// The blocked reduction sums in a different order than the plain loop, so
// agreement is to rounding; thread-count independence is exact.
TEST_CASE("parallel dot and norm match the serial loops") {
  Rng rng = make_rng(1);
  for (std::size_t n : {0u, 1u, 7u, 4096u, 4097u, 100000u, 300001u}) {
    const Vector a = standard_normal(n, rng);
    const Vector b = standard_normal(n, rng);
    const double scale = std::sqrt(kernels::serial::squared_norm(a) * kernels::serial::squared_norm(b));
    CHECK(std::abs(kernels::dot(a, b) - kernels::serial::dot(a, b)) <= 1e-13 * scale);
    CHECK(kernels::squared_norm(a) == doctest::Approx(kernels::serial::squared_norm(a)).epsilon(1e-13));
  }
}

TEST_CASE("dot is independent of the thread count") {
  Rng rng = make_rng(2);
  const Vector a = standard_normal(200000, rng);
  const Vector b = standard_normal(200000, rng);
  const int saved = parallel::max_threads();
  parallel::set_threads(1);
  const double one = kernels::dot(a, b);
  parallel::set_threads(4);
  const double four = kernels::dot(a, b);
  parallel::set_threads(saved);
  CHECK(one == four);
}

TEST_CASE("matvec and axpy agree with the reference") {
  Rng rng = make_rng(3);
  Matrix m(300, 257);
  for (double& x : m.data()) x = std::normal_distribution<double>()(rng);
  const Vector x = standard_normal(257, rng);
  Vector fast(300), slow(300);
  kernels::matvec(m, x, fast);
  kernels::serial::matvec(m, x, slow);
  CHECK(fast == slow);

  Vector y1 = standard_normal(50000, rng);
  Vector y2 = y1;
  const Vector z = standard_normal(50000, rng);
  kernels::axpy(0.37, z, y1);
  kernels::serial::axpy(0.37, z, y2);
  CHECK(y1 == y2);
}

TEST_CASE("sign-assignment count matches brute force") {
  Rng rng = make_rng(4);
  for (std::size_t n = 1; n <= 14; ++n) {
    std::vector<std::uint32_t> r(n);
    for (auto& v : r) v = 1 + static_cast<std::uint32_t>(rng() % 20);
    const std::uint64_t total = std::accumulate(r.begin(), r.end(), std::uint64_t{0});
    for (std::uint64_t thr : {std::uint64_t{0}, total / 3, total / 2, total, total + 1}) {
      std::uint64_t brute = 0;
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        std::uint64_t w = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (mask >> i & 1) w += r[i];
        }
        const auto diff = static_cast<std::int64_t>(2 * w) - static_cast<std::int64_t>(total);
        if (static_cast<std::uint64_t>(diff < 0 ? -diff : diff) >= thr) ++brute;
      }
      CHECK(kernels::count_extreme_sign_assignments(r, thr) == brute);
      CHECK(kernels::serial::count_extreme_sign_assignments(r, thr) == brute);
    }
  }
}

TEST_CASE("parallel map keeps order and reports the lowest failing index") {
  const auto v = parallel::map<int>(100, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == static_cast<int>(i * i));
  try {
    parallel::for_each_index(50, [](std::size_t i) {
      if (i % 7 == 3) throw std::runtime_error(std::to_string(i));
    });
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "3");
  }
}
