#pragma once

// Synthetic residual stack with an RMSNorm-style readout. Each layer adds a
// fixed offset, an optional tanh mixing term and any planted writes:
//
//     h_l = h_{l-1} + c_l + eta * A_l tanh(h_{l-1}) + sum of writes at l
//
// With eta = 0 the stack is affine, so a write at any layer reaches the final
// state unchanged and every first-order prediction can be checked exactly.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aaud/authority.hpp"
#include "aaud/geometry.hpp"
#include "aaud/trace.hpp"

namespace aaud {

struct ReferenceModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 8;
  std::size_t vocab_size = 32;
  std::size_t answer_count = 4;
  double nonlinearity_strength = 0.0;
  std::uint64_t seed = 0;
};

void validate(const ReferenceModelConfig& config);

struct LayerWrite {
  std::size_t layer = 0;
  Vector value;
};

class ReferenceModel {
 public:
  const ReferenceModelConfig& config() const noexcept { return config_; }
  std::size_t hidden_dim() const noexcept { return config_.hidden_dim; }
  std::size_t num_layers() const noexcept { return config_.num_layers; }

  // Parameters are drawn in double and rounded to float so that a dump
  // stores them without loss.
  const Matrix& raw_rows() const noexcept { return raw_rows_; }
  const Vector& gamma() const noexcept { return gamma_; }
  const Vector& biases() const noexcept { return biases_; }
  const EffectiveUnembedding& unembedding() const noexcept { return unemb_; }
  const std::vector<TokenId>& answer_token_ids() const noexcept { return answers_; }

  /// Layer outputs (L x d) for the given input and writes.
  Matrix forward(std::span<const double> input, std::span<const LayerWrite> writes) const;

 private:
  friend ReferenceModel build_reference_model(const ReferenceModelConfig&);

  ReferenceModelConfig config_;
  Matrix raw_rows_;
  Vector gamma_;
  Vector biases_;
  EffectiveUnembedding unemb_;
  std::vector<TokenId> answers_;
  Matrix offsets_;             // L x d
  std::vector<Matrix> mixes_;  // L matrices d x d, empty when eta = 0
};

ReferenceModel build_reference_model(const ReferenceModelConfig& config);

/// One planted conflict. Forces are in logit units; epsilon_scale is the
/// norm of each single-context write relative to the baseline final norm.
struct PlantedConflictSpec {
  std::string instance_id;
  TokenId sensor_answer = 0;
  TokenId user_answer = 0;
  double target_cir_sensor = 0.0;
  double target_cir_user = 0.0;
  double force_sensor = 0.0;
  double force_user = 0.0;
  double interaction = 0.0;
  std::size_t write_layer_sensor = 0;
  std::size_t write_layer_user = 0;
  double epsilon_scale = 0.0;
  double prior_margin = 0.0;          // baseline z(a_s) - z(a_u)
  double other_answer_logit = -2.0;   // baseline logit of the remaining answers
  std::uint64_t seed = 0;
};

struct GroundTruth {
  Vector delta_sensor;
  Vector delta_user;
  Vector delta_interaction;
  double force_sensor = 0.0;
  double force_user = 0.0;
  double interaction = 0.0;
  double aai = 0.0;
  double target_cir_sensor = 0.0;
  double target_cir_user = 0.0;
  std::size_t write_layer_sensor = 0;
  std::size_t write_layer_user = 0;
  double baseline_norm = 0.0;
};

struct PlantedInstance {
  PlantedConflictSpec spec;
  ConflictRecord record;
  TraceSet traces;
  GroundTruth truth;
};

/// Baseline final state of a spec (question input plus the prior write) and
/// the answer subspace around it.
struct PlantedBaseline {
  Vector input;
  Vector prior_write;  // added at the last layer in every condition
  Matrix trace;
  AnswerSubspace subspace;
};

PlantedBaseline plant_baseline(const ReferenceModel& model, const PlantedConflictSpec& spec);

/// Runs the four conditions. With quantize_states the trace states are
/// rounded to float, matching what a dump round trip produces.
PlantedInstance run_conditions(const ReferenceModel& model, const PlantedConflictSpec& spec,
                               bool quantize_states = false);

/// Tangential vector of the given norm whose answer-subspace share is
/// target_cir and whose predictive part projects onto `direction` (which must
/// lie in the subspace) with value target_projection. The remainder is drawn
/// from (seed, stream).
Vector plant_perturbation(const AnswerSubspace& subspace, std::span<const double> direction,
                          double target_cir, double target_projection, double norm,
                          std::uint64_t seed, std::uint64_t stream = 0);

enum class Regime { har_like, casas_like, health_like };

std::string_view to_string(Regime r) noexcept;
std::optional<Regime> parse_regime(std::string_view name) noexcept;

struct RegimeRanges {
  double cir_sensor_lo, cir_sensor_hi;
  double cir_user_lo, cir_user_hi;
};

RegimeRanges regime_ranges(Regime r) noexcept;

struct SuiteOptions {
  Regime regime = Regime::har_like;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  double epsilon = 0.4;
  double alignment_lo = 0.5;
  double alignment_hi = 0.9;
  double prior_margin_mean = 0.0;
  double prior_margin_spread = 0.2;
  double other_answer_logit = -2.0;
  double interaction_fraction = 0.1;  // |I| <= fraction * F_u
  std::optional<std::size_t> fixed_user_layer;
  bool quantize_states = false;
};

/// Instance i is drawn from seed + i, so suites are reproducible and a prefix
/// of a longer suite equals the shorter one.
std::vector<PlantedInstance> generate_conflict_suite(const ReferenceModel& model,
                                                     const SuiteOptions& options);

}  // namespace aaud
