#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aaud/geometry.hpp"

namespace aaud {

enum class Condition : std::uint8_t { baseline = 0, sensor_only = 1, user_only = 2, joint = 3 };

inline constexpr std::array<Condition, 4> kConditions = {
    Condition::baseline, Condition::sensor_only, Condition::user_only, Condition::joint};

std::string_view to_string(Condition c) noexcept;
std::optional<Condition> parse_condition(std::string_view name) noexcept;

inline constexpr std::size_t index_of(Condition c) noexcept { return static_cast<std::size_t>(c); }

/// Final-layer states of one conflict instance under the four conditions,
/// with the decisions each state produces.
struct ConflictRecord {
  std::string instance_id;
  std::array<std::optional<ResidualState>, 4> states;
  TokenId sensor_answer = 0;
  TokenId user_answer = 0;
  TokenId baseline_decision = 0;
  std::array<TokenId, 4> decisions{};         // full-vocabulary argmax
  std::array<TokenId, 4> answer_decisions{};  // argmax restricted to answer tokens
  std::array<std::optional<PerturbationDecomposition>, 4> decomposed;  // relative to baseline

  const ResidualState& state(Condition c) const;
  const PerturbationDecomposition& decomposition(Condition c) const;
  TokenId decision(Condition c) const noexcept { return decisions[index_of(c)]; }
};

/// Builds a record from final-layer vectors indexed by Condition. Rejects
/// sensor_answer == user_answer and mismatched dimensions; decisions are
/// computed through the logits.
ConflictRecord make_conflict_record(std::string instance_id, std::array<Vector, 4> final_states,
                                    TokenId sensor_answer, TokenId user_answer,
                                    const EffectiveUnembedding& unemb,
                                    std::span<const TokenId> answer_token_ids);

/// Fills record.decomposed for every non-baseline condition.
void attach_decompositions(ConflictRecord& record, const AnswerSubspace& subspace);

/// d* = Ptilde w_{a_s} - Ptilde w_{a_u}
Vector decision_direction(const AnswerSubspace& subspace, TokenId sensor_answer,
                          TokenId user_answer);

struct AuthorityForces {
  double sensor = 0.0;  // > 0: sensor pushes toward a_s
  double user = 0.0;    // > 0: user claim pushes toward a_u
};

AuthorityForces authority_forces(const ConflictRecord& record, const AnswerSubspace& subspace,
                                 std::span<const double> direction);

/// (sqrt(d)/r0) d*^T Pi_A P (delta_joint - delta_sensor - delta_user)
double interaction_force(const ConflictRecord& record, const AnswerSubspace& subspace,
                         std::span<const double> direction);

struct AaiValue {
  double value = 0.0;
  bool degenerate = false;  // both forces zero
};

AaiValue aai(double force_sensor, double force_user) noexcept;

struct AuthorityReport {
  double force_sensor = 0.0;
  double force_user = 0.0;
  double interaction = 0.0;
  AaiValue aai;
  double baseline_margin = 0.0;
  double predicted_joint_margin = 0.0;
  double observed_joint_margin = 0.0;
  // Margin read out at the first-order joint direction u0 + P delta_su / r0.
  double linearized_joint_margin = 0.0;
  bool inversion_error_predicted = false;
  Vector decision_direction;
};

/// Joint-margin decomposition m0 + F_s - F_u + I_su for one record. Needs the
/// record's decompositions over `subspace`.
AuthorityReport predict_joint_margin(const ConflictRecord& record, const AnswerSubspace& subspace,
                                     const EffectiveUnembedding& unemb);

struct TrustSummary {
  std::size_t n = 0;
  std::size_t count_sensor = 0;
  std::size_t count_user = 0;
  std::size_t count_other = 0;
  double trust_sensor = 0.0;
  double trust_user = 0.0;
  double trust_other = 0.0;
  double baai = 0.0;
};

/// Trust split of the joint-condition decisions.
TrustSummary behavioral_metrics(std::span<const ConflictRecord> records);

}  // namespace aaud
