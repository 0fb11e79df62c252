#include "aaud/authority.hpp"

#include <algorithm>
#include <cmath>

#include "aaud/error.hpp"
#include "aaud/kernels.hpp"

namespace aaud {

std::string_view to_string(Condition c) noexcept {
  switch (c) {
    case Condition::baseline: return "baseline";
    case Condition::sensor_only: return "sensor_only";
    case Condition::user_only: return "user_only";
    case Condition::joint: return "joint";
  }
  return "?";
}

std::optional<Condition> parse_condition(std::string_view name) noexcept {
  for (Condition c : kConditions) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

const ResidualState& ConflictRecord::state(Condition c) const {
  const auto& s = states[index_of(c)];
  if (!s) {
    fail(ErrorCode::missing_condition,
         instance_id + ": missing condition " + std::string(to_string(c)));
  }
  return *s;
}

const PerturbationDecomposition& ConflictRecord::decomposition(Condition c) const {
  const auto& p = decomposed[index_of(c)];
  if (!p) {
    fail(ErrorCode::missing_condition,
         instance_id + ": no decomposition for condition " + std::string(to_string(c)));
  }
  return *p;
}

ConflictRecord make_conflict_record(std::string instance_id, std::array<Vector, 4> final_states,
                                    TokenId sensor_answer, TokenId user_answer,
                                    const EffectiveUnembedding& unemb,
                                    std::span<const TokenId> answer_token_ids) {
  if (sensor_answer == user_answer) {
    fail(ErrorCode::domain, instance_id + ": sensor and user answers coincide");
  }
  auto is_answer = [&](TokenId t) {
    return std::find(answer_token_ids.begin(), answer_token_ids.end(), t) !=
           answer_token_ids.end();
  };
  if (!is_answer(sensor_answer) || !is_answer(user_answer)) {
    fail(ErrorCode::index, instance_id + ": conflict answers must be answer tokens");
  }

  ConflictRecord rec;
  rec.instance_id = std::move(instance_id);
  rec.sensor_answer = sensor_answer;
  rec.user_answer = user_answer;
  for (Condition c : kConditions) {
    auto& h = final_states[index_of(c)];
    if (h.size() != unemb.hidden_dim()) {
      fail(ErrorCode::shape, rec.instance_id + ": state " + std::string(to_string(c)) +
                                 " has length " + std::to_string(h.size()) + ", expected " +
                                 std::to_string(unemb.hidden_dim()));
    }
    rec.states[index_of(c)].emplace(std::move(h));
    const Vector z = logits(*rec.states[index_of(c)], unemb);
    rec.decisions[index_of(c)] = argmax(z);
    rec.answer_decisions[index_of(c)] = argmax_among(z, answer_token_ids);
  }
  rec.baseline_decision = rec.decisions[index_of(Condition::baseline)];
  return rec;
}

void attach_decompositions(ConflictRecord& record, const AnswerSubspace& subspace) {
  const ResidualState& base = record.state(Condition::baseline);
  for (Condition c : {Condition::sensor_only, Condition::user_only, Condition::joint}) {
    const Vector& h = record.state(c).h();
    Vector delta(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) delta[i] = h[i] - base.h()[i];
    record.decomposed[index_of(c)] = decompose(delta, base, subspace);
  }
}

Vector decision_direction(const AnswerSubspace& subspace, TokenId sensor_answer,
                          TokenId user_answer) {
  if (sensor_answer == user_answer) {
    fail(ErrorCode::domain, "decision direction needs distinct sensor and user answers");
  }
  const auto ws = subspace.tangential_row(sensor_answer);
  const auto wu = subspace.tangential_row(user_answer);
  Vector d(ws.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ws[i] - wu[i];
  return d;
}

namespace {

double force_scale(const ConflictRecord& record) {
  const ResidualState& base = record.state(Condition::baseline);
  return std::sqrt(static_cast<double>(base.dim())) / base.norm();
}

void require_direction(std::span<const double> direction, const AnswerSubspace& subspace) {
  if (direction.size() != subspace.hidden_dim()) {
    fail(ErrorCode::shape, "decision direction length does not match the subspace");
  }
}

}  // namespace

AuthorityForces authority_forces(const ConflictRecord& record, const AnswerSubspace& subspace,
                                 std::span<const double> direction) {
  require_direction(direction, subspace);
  const double scale = force_scale(record);
  const auto& s = record.decomposition(Condition::sensor_only);
  const auto& u = record.decomposition(Condition::user_only);
  return {scale * kernels::dot(direction, s.predictive),
          -scale * kernels::dot(direction, u.predictive)};
}

double interaction_force(const ConflictRecord& record, const AnswerSubspace& subspace,
                         std::span<const double> direction) {
  require_direction(direction, subspace);
  const ResidualState& base = record.state(Condition::baseline);
  const auto& h0 = base.h();
  const auto& hs = record.state(Condition::sensor_only).h();
  const auto& hu = record.state(Condition::user_only).h();
  const auto& hj = record.state(Condition::joint).h();
  Vector inter(h0.size());
  for (std::size_t i = 0; i < inter.size(); ++i) {
    inter[i] = (hj[i] - h0[i]) - (hs[i] - h0[i]) - (hu[i] - h0[i]);
  }
  const Vector projected = subspace.project(tangent_project(inter, base));
  return force_scale(record) * kernels::dot(direction, projected);
}

AaiValue aai(double force_sensor, double force_user) noexcept {
  const double denom = std::abs(force_sensor) + std::abs(force_user);
  if (denom == 0.0) return {0.0, true};
  return {(force_sensor - force_user) / denom, false};
}

AuthorityReport predict_joint_margin(const ConflictRecord& record, const AnswerSubspace& subspace,
                                     const EffectiveUnembedding& unemb) {
  const ResidualState& base = record.state(Condition::baseline);
  for (std::size_t i = 0; i < base.dim(); ++i) {
    if (std::abs(base.unit_dir()[i] - subspace.base_direction[i]) > 1e-12) {
      fail(ErrorCode::consistency, record.instance_id + ": subspace/base mismatch");
    }
  }

  AuthorityReport rep;
  rep.decision_direction = decision_direction(subspace, record.sensor_answer, record.user_answer);
  const auto forces = authority_forces(record, subspace, rep.decision_direction);
  rep.force_sensor = forces.sensor;
  rep.force_user = forces.user;
  rep.interaction = interaction_force(record, subspace, rep.decision_direction);
  rep.aai = aai(rep.force_sensor, rep.force_user);

  const TokenId as = record.sensor_answer;
  const TokenId au = record.user_answer;
  rep.baseline_margin = pairwise_margin(base, unemb, as, au);
  rep.observed_joint_margin = pairwise_margin(record.state(Condition::joint), unemb, as, au);

  // Grouping as (m0 + F_s + I) - F_u makes the inversion test below agree
  // exactly with the sign of the predicted margin.
  const double support = rep.baseline_margin + rep.force_sensor + rep.interaction;
  rep.predicted_joint_margin = support - rep.force_user;
  rep.inversion_error_predicted = rep.force_user > support;

  const auto& joint = record.decomposition(Condition::joint);
  rep.linearized_joint_margin =
      pairwise_margin_at_direction(first_order_direction(base, joint.raw), unemb, as, au);
  return rep;
}

TrustSummary behavioral_metrics(std::span<const ConflictRecord> records) {
  if (records.empty()) fail(ErrorCode::domain, "behavioral metrics need at least one record");
  TrustSummary t;
  t.n = records.size();
  for (const auto& r : records) {
    const TokenId choice = r.decision(Condition::joint);
    if (choice == r.sensor_answer) {
      ++t.count_sensor;
    } else if (choice == r.user_answer) {
      ++t.count_user;
    } else {
      ++t.count_other;
    }
  }
  const double n = static_cast<double>(t.n);
  t.trust_sensor = static_cast<double>(t.count_sensor) / n;
  t.trust_user = static_cast<double>(t.count_user) / n;
  t.trust_other = static_cast<double>(t.count_other) / n;
  t.baai = t.trust_sensor - t.trust_user;
  return t;
}

}  // namespace aaud
