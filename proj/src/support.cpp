#include <cstdlib>
#include <string>

#include "aaud/error.hpp"
#include "aaud/matrix.hpp"
#include "aaud/parallel.hpp"

namespace aaud {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::shape: return "shape";
    case ErrorCode::data: return "data";
    case ErrorCode::index: return "index";
    case ErrorCode::duplicate: return "duplicate";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::consistency: return "consistency";
    case ErrorCode::domain: return "domain";
    case ErrorCode::missing_condition: return "missing_condition";
    case ErrorCode::unachievable: return "unachievable";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::bad_version: return "bad_version";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::malformed: return "malformed";
    case ErrorCode::manifest: return "manifest";
    case ErrorCode::unknown_kind: return "unknown_kind";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) fail(ErrorCode::shape, "matrix data size does not match dimensions");
}

namespace parallel {

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) noexcept {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int configure_from_env() noexcept {
  const char* raw = std::getenv("AAUD_THREADS");
  if (raw == nullptr) return 0;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || n <= 0 || n > 4096) return 0;
  set_threads(static_cast<int>(n));
  return static_cast<int>(n);
}

}  // namespace parallel

}  // namespace aaud
