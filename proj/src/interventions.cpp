#include "aaud/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aaud/error.hpp"
#include "aaud/kernels.hpp"
#include "aaud/parallel.hpp"
#include "aaud/random.hpp"

namespace aaud {

std::string_view to_string(InterventionKind k) noexcept {
  switch (k) {
    case InterventionKind::ablate_user_predictive: return "ablate_user_predictive";
    case InterventionKind::ablate_random: return "ablate_random";
    case InterventionKind::ablate_null: return "ablate_null";
    case InterventionKind::inject_theory: return "inject_theory";
    case InterventionKind::inject_random: return "inject_random";
  }
  return "?";
}

std::optional<InterventionKind> parse_intervention_kind(std::string_view name) noexcept {
  for (auto k : {InterventionKind::ablate_user_predictive, InterventionKind::ablate_random,
                 InterventionKind::ablate_null, InterventionKind::inject_theory,
                 InterventionKind::inject_random}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view to_string(PatchMode m) noexcept {
  return m == PatchMode::block ? "block" : "state";
}

std::optional<PatchMode> parse_patch_mode(std::string_view name) noexcept {
  if (name == "block") return PatchMode::block;
  if (name == "state") return PatchMode::state;
  return std::nullopt;
}

namespace {

InterventionResult finish(const ConflictRecord& record, const EffectiveUnembedding& unemb,
                          InterventionKind kind, Vector modified, double magnitude) {
  InterventionResult r;
  r.instance_id = record.instance_id;
  r.kind = kind;
  r.magnitude = magnitude;
  const ResidualState& joint = record.state(Condition::joint);
  r.pre_decision = record.decision(Condition::joint);
  r.pre_margin = pairwise_margin(joint, unemb, record.sensor_answer, record.user_answer);
  const ResidualState post(std::move(modified));
  r.post_decision = argmax(logits(post, unemb));
  r.post_margin = pairwise_margin(post, unemb, record.sensor_answer, record.user_answer);
  r.flipped = r.pre_decision != record.sensor_answer && r.post_decision == record.sensor_answer;
  return r;
}

Vector joint_minus(const ConflictRecord& record, std::span<const double> v) {
  Vector h = record.state(Condition::joint).h();
  for (std::size_t i = 0; i < h.size(); ++i) h[i] -= v[i];
  return h;
}

}  // namespace

InterventionResult ablate_user_predictive(const ConflictRecord& record,
                                          const EffectiveUnembedding& unemb) {
  const auto& u = record.decomposition(Condition::user_only);
  return finish(record, unemb, InterventionKind::ablate_user_predictive,
                joint_minus(record, u.predictive), kernels::norm(u.predictive));
}

InterventionResult ablate_control(const ConflictRecord& record, const EffectiveUnembedding& unemb,
                                  AblationControl kind, std::uint64_t seed, std::uint64_t stream) {
  const auto& u = record.decomposition(Condition::user_only);
  if (kind == AblationControl::null_component) {
    return finish(record, unemb, InterventionKind::ablate_null, joint_minus(record, u.nullspace),
                  kernels::norm(u.nullspace));
  }
  const double magnitude = kernels::norm(u.predictive);
  Rng rng = make_rng(seed, stream);
  Vector v = random_tangent_unit(record.state(Condition::baseline), rng);
  for (double& x : v) x *= magnitude;
  auto r = finish(record, unemb, InterventionKind::ablate_random, joint_minus(record, v), magnitude);
  r.seed = seed;
  r.trial = stream;
  return r;
}

double required_injection_magnitude(double observed_joint_margin,
                                    std::span<const double> direction, double r0, std::size_t d,
                                    double safety) {
  const double dn = kernels::norm(direction);
  if (!(dn > 0.0)) fail(ErrorCode::degenerate, "injection direction is zero");
  if (!(safety >= 1.0) || !std::isfinite(safety)) fail(ErrorCode::domain, "safety must be >= 1");
  if (!(r0 > 0.0) || d == 0) fail(ErrorCode::domain, "injection needs r0 > 0 and d >= 1");
  return safety * std::max(0.0, -observed_joint_margin) * r0 /
         (std::sqrt(static_cast<double>(d)) * dn);
}

double theory_injection_magnitude(const ConflictRecord& record, const AnswerSubspace& subspace,
                                  const EffectiveUnembedding& unemb, double safety) {
  const ResidualState& joint = record.state(Condition::joint);
  const Vector dstar = decision_direction(subspace, record.sensor_answer, record.user_answer);
  const double m = pairwise_margin(joint, unemb, record.sensor_answer, record.user_answer);
  return required_injection_magnitude(m, dstar, joint.norm(), joint.dim(), safety);
}

InterventionResult inject(const ConflictRecord& record, const AnswerSubspace& subspace,
                          const EffectiveUnembedding& unemb, InjectionDirection direction,
                          double magnitude, std::uint64_t seed, std::uint64_t stream) {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    fail(ErrorCode::domain, "injection magnitude must be finite and >= 0");
  }
  const ResidualState& joint = record.state(Condition::joint);
  Vector unit;
  if (direction == InjectionDirection::theory) {
    unit = decision_direction(subspace, record.sensor_answer, record.user_answer);
    const double dn = kernels::norm(unit);
    if (!(dn > 0.0)) fail(ErrorCode::degenerate, record.instance_id + ": decision direction is zero");
    for (double& x : unit) x /= dn;
  } else {
    Rng rng = make_rng(seed, stream);
    unit = random_tangent_unit(joint, rng);
  }
  Vector h = joint.h();
  kernels::axpy(magnitude, unit, h);
  auto r = finish(record, unemb,
                  direction == InjectionDirection::theory ? InterventionKind::inject_theory
                                                          : InterventionKind::inject_random,
                  std::move(h), magnitude);
  if (direction == InjectionDirection::random) {
    r.seed = seed;
    r.trial = stream;
  }
  return r;
}

namespace {

std::vector<char> layer_mask(std::span<const std::size_t> layers, std::size_t l) {
  std::vector<char> mask(l, 0);
  for (std::size_t layer : layers) {
    if (layer >= l) {
      fail(ErrorCode::index, "layer " + std::to_string(layer) + " out of range for " +
                                 std::to_string(l) + " layers");
    }
    mask[layer] = 1;
  }
  return mask;
}

void require_matching(const LayerTrace& a, const LayerTrace& b) {
  if (a.num_layers() == 0 || a.num_layers() != b.num_layers() || a.hidden_dim() != b.hidden_dim()) {
    fail(ErrorCode::shape, a.instance_id + ": traces differ in layer count or width");
  }
}

}  // namespace

Vector gac(const LayerTrace& source, const LayerTrace& baseline,
           std::span<const std::size_t> critical_layers, double alpha, PatchMode mode) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::domain, "alpha must lie in [0, 1]");
  require_matching(source, baseline);
  const std::size_t l = source.num_layers();
  const std::size_t d = source.hidden_dim();
  const auto mask = layer_mask(critical_layers, l);
  const auto src = [&](std::size_t layer) { return source.states.row(layer); };
  const auto base = [&](std::size_t layer) { return baseline.states.row(layer); };

  if (mode == PatchMode::block) {
    const bool all = std::all_of(mask.begin(), mask.end(), [](char c) { return c != 0; });
    Vector out(d);
    const auto hs = src(l - 1);
    const auto hb = base(l - 1);
    if (all) {
      // The updates telescope to the final states.
      for (std::size_t i = 0; i < d; ++i) out[i] = std::lerp(hb[i], hs[i], alpha);
      return out;
    }
    Vector removed(d, 0.0);
    for (std::size_t layer = 0; layer < l; ++layer) {
      if (!mask[layer]) continue;
      const auto s = src(layer);
      const auto b = base(layer);
      for (std::size_t i = 0; i < d; ++i) {
        const double s_prev = layer > 0 ? src(layer - 1)[i] : 0.0;
        const double b_prev = layer > 0 ? base(layer - 1)[i] : 0.0;
        removed[i] += (s[i] - s_prev) - (b[i] - b_prev);
      }
    }
    const double keep = 1.0 - alpha;
    for (std::size_t i = 0; i < d; ++i) out[i] = hs[i] - keep * removed[i];
    return out;
  }

  // State semantics: carry the offset between the patched run and the source
  // run; it is exactly zero until the first critical layer.
  Vector offset(d, 0.0);
  Vector state(d);
  for (std::size_t layer = 0; layer < l; ++layer) {
    const auto s = src(layer);
    for (std::size_t i = 0; i < d; ++i) state[i] = s[i] + offset[i];
    if (mask[layer]) {
      const auto b = base(layer);
      for (std::size_t i = 0; i < d; ++i) {
        state[i] = std::lerp(b[i], state[i], alpha);
        offset[i] = state[i] - s[i];
      }
    }
  }
  return state;
}

Vector patch_final(const LayerTrace& source, const LayerTrace& baseline,
                   std::span<const std::size_t> layers, PatchMode mode) {
  return gac(source, baseline, layers, 0.0, mode);
}

Vector layer_importance(const LayerTrace& joint, const LayerTrace& baseline,
                        const EffectiveUnembedding& unemb, TokenId sensor_answer,
                        TokenId user_answer, PatchMode mode) {
  require_matching(joint, baseline);
  const auto fin = joint.final_state();
  const double unpatched = pairwise_margin(ResidualState(Vector(fin.begin(), fin.end())), unemb,
                                           sensor_answer, user_answer);
  Vector out(joint.num_layers());
  for (std::size_t layer = 0; layer < out.size(); ++layer) {
    const std::size_t one[1] = {layer};
    const ResidualState patched(patch_final(joint, baseline, one, mode));
    out[layer] = pairwise_margin(patched, unemb, sensor_answer, user_answer) - unpatched;
  }
  return out;
}

std::vector<std::size_t> rank_layers(std::span<const Vector> importances) {
  if (importances.empty()) fail(ErrorCode::domain, "no layer importances to rank");
  const std::size_t l = importances.front().size();
  Vector mean(l, 0.0);
  for (const auto& v : importances) {
    if (v.size() != l) fail(ErrorCode::shape, "importance vectors differ in length");
    for (std::size_t i = 0; i < l; ++i) mean[i] += v[i];
  }
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  return order;
}

double patched_accuracy(std::span<const TraceSet> sets, const EffectiveUnembedding& unemb,
                        std::span<const std::size_t> layers, double alpha, PatchMode mode,
                        Condition source) {
  if (sets.empty()) fail(ErrorCode::domain, "no instances to evaluate");
  const auto hits = parallel::map<char>(sets.size(), [&](std::size_t i) -> char {
    const TraceSet& s = sets[i];
    const ResidualState h(gac(s.get(source), s.get(Condition::baseline), layers, alpha, mode));
    return argmax(logits(h, unemb)) == s.sensor_answer ? 1 : 0;
  });
  const auto count = static_cast<double>(std::count(hits.begin(), hits.end(), char{1}));
  return count / static_cast<double>(sets.size());
}

double cumulative_ablation(std::span<const TraceSet> sets, const EffectiveUnembedding& unemb,
                           std::span<const std::size_t> ranked_layers, std::size_t k,
                           PatchMode mode) {
  if (k > ranked_layers.size()) {
    fail(ErrorCode::domain, "cumulative ablation k exceeds the number of ranked layers");
  }
  if (!sets.empty() && k > sets.front().get(Condition::joint).num_layers()) {
    fail(ErrorCode::domain, "cumulative ablation k exceeds the layer count");
  }
  return patched_accuracy(sets, unemb, ranked_layers.first(k), 0.0, mode, Condition::joint);
}

}  // namespace aaud
