#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "aaud/authority.hpp"
#include "aaud/matrix.hpp"

namespace aaud {

/// Residual states at the answer position, one row per layer output.
struct LayerTrace {
  std::string instance_id;
  Condition condition = Condition::baseline;
  Matrix states;  // L x d

  std::size_t num_layers() const noexcept { return states.rows(); }
  std::size_t hidden_dim() const noexcept { return states.cols(); }
  std::span<const double> final_state() const noexcept { return states.row(states.rows() - 1); }
};

/// The four condition traces of one instance.
struct TraceSet {
  std::string instance_id;
  TokenId sensor_answer = 0;
  TokenId user_answer = 0;
  std::array<std::optional<LayerTrace>, 4> traces;

  const LayerTrace& get(Condition c) const;
  bool has(Condition c) const noexcept { return traces[index_of(c)].has_value(); }
};

}  // namespace aaud
