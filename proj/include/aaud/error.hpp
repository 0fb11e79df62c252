#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aaud {

enum class ErrorCode {
  shape,              // dimension mismatch
  data,               // non-finite or otherwise invalid values
  index,              // token or layer index out of range
  duplicate,          // repeated ids or names
  degenerate,         // zero-norm state, empty subspace, zero variance
  consistency,        // objects built over different base directions
  domain,             // argument outside the admissible range
  missing_condition,  // a conflict record lacks a required condition
  unachievable,       // planted targets cannot be met
  io,                 // file could not be opened, read or written
  bad_magic,
  bad_version,
  checksum,
  truncated,
  malformed,          // structurally invalid dump index
  manifest,           // manifest fails validation against schema or dump
  unknown_kind,       // unrecognised intervention kind or option value
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace aaud
