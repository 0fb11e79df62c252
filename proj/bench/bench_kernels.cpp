// Serial reference vs parallel kernels. Thread count follows AAUD_THREADS /
// OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "aaud/geometry.hpp"
#include "aaud/kernels.hpp"
#include "aaud/parallel.hpp"
#include "aaud/random.hpp"

namespace {

using namespace aaud;

void BM_dot_serial(benchmark::State& st) {
  Rng rng = make_rng(1);
  const Vector a = standard_normal(st.range(0), rng), b = standard_normal(st.range(0), rng);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::dot(a, b));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_dot_parallel(benchmark::State& st) {
  Rng rng = make_rng(1);
  const Vector a = standard_normal(st.range(0), rng), b = standard_normal(st.range(0), rng);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::dot(a, b));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = std::normal_distribution<double>()(rng);
  return m;
}

void BM_matvec_serial(benchmark::State& st) {
  Rng rng = make_rng(2);
  const Matrix m = random_matrix(st.range(0), 4096, rng);
  const Vector x = standard_normal(4096, rng);
  Vector out(m.rows());
  for (auto _ : st) {
    kernels::serial::matvec(m, x, out);
    benchmark::ClobberMemory();
  }
}

void BM_matvec_parallel(benchmark::State& st) {
  Rng rng = make_rng(2);
  const Matrix m = random_matrix(st.range(0), 4096, rng);
  const Vector x = standard_normal(4096, rng);
  Vector out(m.rows());
  for (auto _ : st) {
    kernels::matvec(m, x, out);
    benchmark::ClobberMemory();
  }
}

std::vector<std::uint32_t> ranks(std::size_t n) {
  std::vector<std::uint32_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = 2 * static_cast<std::uint32_t>(i + 1);
  return r;
}

void BM_enumerate_serial(benchmark::State& st) {
  const auto r = ranks(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::count_extreme_sign_assignments(r, 40));
}

void BM_enumerate_parallel(benchmark::State& st) {
  const auto r = ranks(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::count_extreme_sign_assignments(r, 40));
}

}  // namespace

BENCHMARK(BM_dot_serial)->Arg(4096)->Arg(1 << 20);
BENCHMARK(BM_dot_parallel)->Arg(4096)->Arg(1 << 20);
BENCHMARK(BM_matvec_serial)->Arg(64)->Arg(4096);
BENCHMARK(BM_matvec_parallel)->Arg(64)->Arg(4096);
BENCHMARK(BM_enumerate_serial)->Arg(16)->Arg(22);
BENCHMARK(BM_enumerate_parallel)->Arg(16)->Arg(22);

int main(int argc, char** argv) {
  aaud::parallel::configure_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
