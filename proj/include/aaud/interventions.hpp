#pragma once

// Causal interventions on the joint-condition state at the answer position:
// removing or injecting components, and patching per-layer outputs with the
// baseline run.
//
// Patching works on stored layer traces. Two semantics are offered:
//
//   block  Layer l's output is its residual update D_l = h_l - h_{l-1}
//          (h_{-1} = 0). Patching replaces the joint update with the baseline
//          update and leaves every other update as recorded.
//   state  Layer l's output is the stored state h_l. Patching replaces it and
//          replays the joint run's later inter-layer deltas on top.
//
// Both are exact for a stack whose updates do not depend on the state; for
// real dumps they are stand-ins for rerunning the forward pass.

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

enum class InterventionKind {
  ablate_user_predictive,
  ablate_random,
  ablate_null,
  inject_theory,
  inject_random,
};

std::string_view to_string(InterventionKind k) noexcept;
std::optional<InterventionKind> parse_intervention_kind(std::string_view name) noexcept;

struct InterventionResult {
  std::string instance_id;
  InterventionKind kind = InterventionKind::ablate_user_predictive;
  TokenId pre_decision = 0;
  TokenId post_decision = 0;
  // pre != a_s and post == a_s
  bool flipped = false;
  double magnitude = 0.0;
  std::optional<std::uint64_t> seed;
  std::uint64_t trial = 0;
  double pre_margin = 0.0;   // m(a_s, a_u) of the joint state
  double post_margin = 0.0;  // same after the intervention
};

/// h' = h_joint - delta_r^u
InterventionResult ablate_user_predictive(const ConflictRecord& record,
                                          const EffectiveUnembedding& unemb);

enum class AblationControl { random_matched, null_component };

/// random_matched subtracts a random tangent vector (tangent at the baseline
/// state) with the norm of delta_r^u; null_component subtracts delta_null^u.
InterventionResult ablate_control(const ConflictRecord& record, const EffectiveUnembedding& unemb,
                                  AblationControl kind, std::uint64_t seed,
                                  std::uint64_t stream = 0);

/// safety * max(0, -m) * r0 / (sqrt(d) |direction|)
double required_injection_magnitude(double observed_joint_margin,
                                    std::span<const double> direction, double r0, std::size_t d,
                                    double safety);

/// Magnitude for a theory injection into the record's joint state, taking r0
/// as the joint norm.
double theory_injection_magnitude(const ConflictRecord& record, const AnswerSubspace& subspace,
                                  const EffectiveUnembedding& unemb, double safety);

enum class InjectionDirection { theory, random };

/// theory adds magnitude * d* / |d*| to h_joint; random adds a random unit
/// vector tangent at h_joint, at the same magnitude.
InterventionResult inject(const ConflictRecord& record, const AnswerSubspace& subspace,
                          const EffectiveUnembedding& unemb, InjectionDirection direction,
                          double magnitude, std::uint64_t seed, std::uint64_t stream = 0);

enum class PatchMode { block, state };

std::string_view to_string(PatchMode m) noexcept;
std::optional<PatchMode> parse_patch_mode(std::string_view name) noexcept;

/// Final state after interpolating `source` toward `baseline` at the given
/// layers: each patched output becomes baseline + alpha (source - baseline).
/// alpha = 1 returns the source final state bit for bit; alpha = 0 with every
/// layer listed returns the baseline final state bit for bit.
Vector gac(const LayerTrace& source, const LayerTrace& baseline,
           std::span<const std::size_t> critical_layers, double alpha, PatchMode mode);

/// gac with alpha = 0.
Vector patch_final(const LayerTrace& source, const LayerTrace& baseline,
                   std::span<const std::size_t> layers, PatchMode mode);

/// Entry l: m(a_s, a_u) with layer l patched minus the unpatched margin.
Vector layer_importance(const LayerTrace& joint, const LayerTrace& baseline,
                        const EffectiveUnembedding& unemb, TokenId sensor_answer,
                        TokenId user_answer, PatchMode mode);

/// Layers by population mean importance, descending; ties go to the lower
/// layer.
std::vector<std::size_t> rank_layers(std::span<const Vector> importances);

/// Fraction of instances deciding a_s after interpolating `source` toward
/// baseline at `layers`.
double patched_accuracy(std::span<const TraceSet> sets, const EffectiveUnembedding& unemb,
                        std::span<const std::size_t> layers, double alpha, PatchMode mode,
                        Condition source = Condition::joint);

/// Patches the first k ranked layers of every joint trace with the baseline
/// and returns the fraction deciding a_s.
double cumulative_ablation(std::span<const TraceSet> sets, const EffectiveUnembedding& unemb,
                           std::span<const std::size_t> ranked_layers, std::size_t k,
                           PatchMode mode);

}  // namespace aaud
