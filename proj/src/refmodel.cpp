#include "aaud/refmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aaud/error.hpp"
#include "aaud/kernels.hpp"
#include "aaud/parallel.hpp"
#include "aaud/random.hpp"

namespace aaud {

namespace {

double to_float_precision(double x) { return static_cast<double>(static_cast<float>(x)); }

// Streams of the per-instance generator. Keeping them fixed means adding a
// draw to one stream never shifts another.
enum Stream : std::uint64_t {
  kInputStream = 0,
  kSensorStream = 1,
  kUserStream = 2,
  kSuiteStream = 3,
};

// Solves G x = b in place for a small symmetric positive definite G.
Vector cholesky_solve(Matrix g, Vector b) {
  const std::size_t n = g.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double diag = g(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= g(j, k) * g(j, k);
    if (!(diag > 0.0)) fail(ErrorCode::degenerate, "answer rows are linearly dependent");
    g(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
      g(i, j) = s / g(j, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= g(i, k) * b[k];
    b[i] /= g(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= g(k, i) * b[k];
    b[i] /= g(i, i);
  }
  return b;
}

Vector unit_or_empty(Vector v) {
  const double n = kernels::norm(v);
  if (!(n > 1e-12)) return {};
  for (double& x : v) x /= n;
  return v;
}

}  // namespace

void validate(const ReferenceModelConfig& c) {
  if (c.answer_count < 1) fail(ErrorCode::domain, "reference model needs at least one answer");
  if (c.hidden_dim < c.answer_count + 2) {
    fail(ErrorCode::domain, "reference model needs hidden_dim >= answer_count + 2");
  }
  if (c.num_layers < 2) fail(ErrorCode::domain, "reference model needs at least two layers");
  if (c.vocab_size < c.answer_count) {
    fail(ErrorCode::domain, "reference model needs vocab_size >= answer_count");
  }
  if (!(c.nonlinearity_strength >= 0.0) || !std::isfinite(c.nonlinearity_strength)) {
    fail(ErrorCode::domain, "nonlinearity_strength must be finite and nonnegative");
  }
}

ReferenceModel build_reference_model(const ReferenceModelConfig& config) {
  validate(config);
  const std::size_t d = config.hidden_dim;
  const std::size_t v = config.vocab_size;
  const std::size_t l = config.num_layers;
  Rng rng = make_rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ReferenceModel m;
  m.config_ = config;

  const double row_scale = 1.0 / std::sqrt(static_cast<double>(d));
  m.raw_rows_ = Matrix(v, d);
  for (double& x : m.raw_rows_.data()) x = to_float_precision(row_scale * normal(rng));
  m.gamma_.resize(d);
  for (double& g : m.gamma_) g = to_float_precision(uniform(0.5, 1.5, rng));

  std::vector<TokenId> ids(v);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::shuffle(ids.begin(), ids.end(), rng);
  m.answers_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(config.answer_count));
  std::sort(m.answers_.begin(), m.answers_.end());

  // Answers share a zero bias; the rest sit well below so that the decision
  // is always among the answers unless a context drives a token up directly.
  m.biases_.assign(v, 0.0);
  for (std::size_t k = 0; k < v; ++k) {
    const bool is_answer = std::binary_search(m.answers_.begin(), m.answers_.end(), k);
    const double b = to_float_precision(-6.0 + 0.5 * normal(rng));
    if (!is_answer) m.biases_[k] = b;
  }
  m.unemb_ = build_effective_unembedding(m.raw_rows_, m.gamma_, m.biases_);

  m.offsets_ = Matrix(l, d);
  for (double& x : m.offsets_.data()) x = 0.1 * normal(rng);

  if (config.nonlinearity_strength > 0.0) {
    m.mixes_.reserve(l);
    for (std::size_t i = 0; i < l; ++i) {
      Matrix a(d, d);
      for (double& x : a.data()) x = row_scale * normal(rng);
      m.mixes_.push_back(std::move(a));
    }
  }
  return m;
}

Matrix ReferenceModel::forward(std::span<const double> input,
                               std::span<const LayerWrite> writes) const {
  const std::size_t d = hidden_dim();
  const std::size_t l = num_layers();
  if (input.size() != d) fail(ErrorCode::shape, "reference input length mismatch");
  for (const auto& w : writes) {
    if (w.layer >= l) fail(ErrorCode::index, "write layer out of range");
    if (w.value.size() != d) fail(ErrorCode::shape, "write length mismatch");
  }
  const double eta = config_.nonlinearity_strength;
  Matrix out(l, d);
  Vector prev(input.begin(), input.end());
  Vector squashed(d);
  Vector mixed(d);
  for (std::size_t layer = 0; layer < l; ++layer) {
    auto h = out.row(layer);
    const auto c = offsets_.row(layer);
    for (std::size_t i = 0; i < d; ++i) h[i] = prev[i] + c[i];
    if (eta > 0.0) {
      for (std::size_t i = 0; i < d; ++i) squashed[i] = std::tanh(prev[i]);
      kernels::matvec(mixes_[layer], squashed, mixed);
      for (std::size_t i = 0; i < d; ++i) h[i] += eta * mixed[i];
    }
    for (const auto& w : writes) {
      if (w.layer != layer) continue;
      for (std::size_t i = 0; i < d; ++i) h[i] += w.value[i];
    }
    prev.assign(h.begin(), h.end());
  }
  return out;
}

Vector plant_perturbation(const AnswerSubspace& subspace, std::span<const double> direction,
                          double target_cir, double target_projection, double norm,
                          std::uint64_t seed, std::uint64_t stream) {
  const std::size_t d = subspace.hidden_dim();
  if (direction.size() != d) fail(ErrorCode::shape, "planting direction length mismatch");
  if (!(target_cir >= 0.0 && target_cir <= 1.0)) {
    fail(ErrorCode::domain, "target CIR must lie in [0, 1]");
  }
  if (!(norm >= 0.0) || !std::isfinite(norm) || !std::isfinite(target_projection)) {
    fail(ErrorCode::domain, "planting norm and projection must be finite, norm >= 0");
  }
  const double dn = kernels::norm(direction);
  if (!(dn > 0.0)) fail(ErrorCode::degenerate, "planting direction is zero");
  {
    const Vector pd = subspace.project(direction);
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i) off += (pd[i] - direction[i]) * (pd[i] - direction[i]);
    if (std::sqrt(off) > 1e-9 * dn) {
      fail(ErrorCode::domain, "planting direction must lie in the answer subspace");
    }
  }

  const double n_pred = target_cir * norm;
  const double n_null = std::sqrt(std::max(0.0, 1.0 - target_cir * target_cir)) * norm;
  const double along = target_projection / dn;
  if (std::abs(along) > n_pred * (1.0 + 1e-12)) {
    fail(ErrorCode::unachievable, "target projection exceeds the predictive norm");
  }
  const double rest = std::sqrt(std::max(0.0, n_pred * n_pred - along * along));

  Rng rng = make_rng(seed, stream);
  Vector delta(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) delta[i] = along * direction[i] / dn;

  if (rest > 1e-12 * norm) {
    Vector q = subspace.project(standard_normal(d, rng));
    const double c = kernels::dot(q, direction) / (dn * dn);
    for (std::size_t i = 0; i < d; ++i) q[i] -= c * direction[i];
    q = unit_or_empty(std::move(q));
    if (q.empty()) {
      fail(ErrorCode::unachievable, "answer subspace has no room beside the direction");
    }
    kernels::axpy(rest, q, delta);
  }

  if (n_null > 1e-12 * norm) {
    // P x - Pi_A P x, with P built from the subspace's base direction.
    Vector x = standard_normal(d, rng);
    const auto& u = subspace.base_direction;
    const double radial = kernels::dot(x, u);
    for (std::size_t i = 0; i < d; ++i) x[i] -= radial * u[i];
    const Vector px = subspace.project(x);
    for (std::size_t i = 0; i < d; ++i) x[i] -= px[i];
    x = unit_or_empty(std::move(x));
    if (x.empty()) fail(ErrorCode::unachievable, "null space is empty at this dimension");
    kernels::axpy(n_null, x, delta);
  }
  return delta;
}

namespace {

void validate_spec(const ReferenceModel& model, const PlantedConflictSpec& s) {
  const auto& answers = model.answer_token_ids();
  auto known = [&](TokenId t) { return std::find(answers.begin(), answers.end(), t) != answers.end(); };
  if (!known(s.sensor_answer) || !known(s.user_answer)) {
    fail(ErrorCode::index, s.instance_id + ": planted answers must be model answer tokens");
  }
  if (s.sensor_answer == s.user_answer) {
    fail(ErrorCode::domain, s.instance_id + ": sensor and user answers coincide");
  }
  if (s.write_layer_sensor >= model.num_layers() || s.write_layer_user >= model.num_layers()) {
    fail(ErrorCode::index, s.instance_id + ": write layer out of range");
  }
  for (double c : {s.target_cir_sensor, s.target_cir_user}) {
    if (!(c >= 0.0 && c <= 1.0)) fail(ErrorCode::domain, s.instance_id + ": CIR outside [0, 1]");
  }
  if (!(s.epsilon_scale >= 0.0) || !std::isfinite(s.epsilon_scale)) {
    fail(ErrorCode::domain, s.instance_id + ": epsilon_scale must be finite and >= 0");
  }
  for (double f : {s.force_sensor, s.force_user, s.interaction, s.prior_margin,
                   s.other_answer_logit}) {
    if (!std::isfinite(f)) fail(ErrorCode::domain, s.instance_id + ": non-finite planted value");
  }
}

}  // namespace

PlantedBaseline plant_baseline(const ReferenceModel& model, const PlantedConflictSpec& spec) {
  validate_spec(model, spec);
  const std::size_t d = model.hidden_dim();
  const std::size_t l = model.num_layers();
  const auto& answers = model.answer_token_ids();
  const auto& unemb = model.unembedding();

  PlantedBaseline out;
  Rng rng = make_rng(spec.seed, kInputStream);
  out.input = standard_normal(d, rng);
  const Matrix bare = model.forward(out.input, {});
  const auto h = bare.row(l - 1);

  // Answer rows W (K x d) and their Gram matrix.
  const std::size_t k = answers.size();
  Matrix gram(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      gram(i, j) = gram(j, i) = kernels::dot(unemb.rows.row(answers[i]), unemb.rows.row(answers[j]));
    }
  }
  auto combine = [&](const Vector& coef) {
    Vector v(d, 0.0);
    for (std::size_t i = 0; i < k; ++i) kernels::axpy(coef[i], unemb.rows.row(answers[i]), v);
    return v;
  };

  // h = a + b with a in span(W). Replace a by s * q0, where W q0 = t / sqrt(d)
  // and s = |b| / sqrt(1 - |q0|^2) is the final norm; then z_k = t_k exactly.
  Vector wh(k);
  for (std::size_t i = 0; i < k; ++i) wh[i] = kernels::dot(unemb.rows.row(answers[i]), h);
  const Vector a = combine(cholesky_solve(gram, wh));
  Vector targets(k, spec.other_answer_logit);
  for (std::size_t i = 0; i < k; ++i) {
    if (answers[i] == spec.sensor_answer) targets[i] = 0.5 * spec.prior_margin;
    if (answers[i] == spec.user_answer) targets[i] = -0.5 * spec.prior_margin;
    targets[i] /= std::sqrt(static_cast<double>(d));
  }
  const Vector q0 = combine(cholesky_solve(gram, targets));
  const double q0_sq = kernels::squared_norm(q0);
  double b_sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) b_sq += (h[i] - a[i]) * (h[i] - a[i]);
  if (!(q0_sq < 1.0) || !(b_sq > 0.0)) {
    fail(ErrorCode::unachievable, spec.instance_id + ": prior logits cannot be planted");
  }
  const double s = std::sqrt(b_sq / (1.0 - q0_sq));
  out.prior_write.resize(d);
  for (std::size_t i = 0; i < d; ++i) out.prior_write[i] = s * q0[i] - a[i];

  const LayerWrite prior{l - 1, out.prior_write};
  out.trace = model.forward(out.input, std::span(&prior, 1));
  const ResidualState base(Vector(out.trace.row(l - 1).begin(), out.trace.row(l - 1).end()));
  out.subspace = build_answer_subspace(unemb, base, answers);
  return out;
}

PlantedInstance run_conditions(const ReferenceModel& model, const PlantedConflictSpec& spec,
                               bool quantize_states) {
  PlantedBaseline pb = plant_baseline(model, spec);
  const std::size_t d = model.hidden_dim();
  const std::size_t l = model.num_layers();
  const AnswerSubspace& sub = pb.subspace;
  const Vector dstar = decision_direction(sub, spec.sensor_answer, spec.user_answer);
  const double dstar_sq = kernels::squared_norm(dstar);
  const double r0 = kernels::norm(pb.trace.row(l - 1));
  const double scale = r0 / std::sqrt(static_cast<double>(d));  // logits -> projection units
  const double norm = spec.epsilon_scale * r0;

  GroundTruth truth;
  truth.delta_sensor = plant_perturbation(sub, dstar, spec.target_cir_sensor,
                                          spec.force_sensor * scale, norm, spec.seed, kSensorStream);
  truth.delta_user = plant_perturbation(sub, dstar, spec.target_cir_user, -spec.force_user * scale,
                                        norm, spec.seed, kUserStream);
  truth.delta_interaction.resize(d);
  if (!(dstar_sq > 0.0)) fail(ErrorCode::degenerate, spec.instance_id + ": decision direction is zero");
  for (std::size_t i = 0; i < d; ++i) {
    truth.delta_interaction[i] = spec.interaction * scale / dstar_sq * dstar[i];
  }
  truth.force_sensor = spec.force_sensor;
  truth.force_user = spec.force_user;
  truth.interaction = spec.interaction;
  truth.aai = aai(spec.force_sensor, spec.force_user).value;
  truth.target_cir_sensor = spec.target_cir_sensor;
  truth.target_cir_user = spec.target_cir_user;
  truth.write_layer_sensor = spec.write_layer_sensor;
  truth.write_layer_user = spec.write_layer_user;
  truth.baseline_norm = r0;

  const LayerWrite prior{l - 1, pb.prior_write};
  const LayerWrite ws{spec.write_layer_sensor, truth.delta_sensor};
  const LayerWrite wu{spec.write_layer_user, truth.delta_user};
  const LayerWrite wi{spec.write_layer_user, truth.delta_interaction};

  std::array<Matrix, 4> states;
  states[index_of(Condition::baseline)] = std::move(pb.trace);
  {
    const std::array<LayerWrite, 2> w{ws, prior};
    states[index_of(Condition::sensor_only)] = model.forward(pb.input, w);
  }
  {
    const std::array<LayerWrite, 2> w{wu, prior};
    states[index_of(Condition::user_only)] = model.forward(pb.input, w);
  }
  {
    const std::array<LayerWrite, 4> w{ws, wu, wi, prior};
    states[index_of(Condition::joint)] = model.forward(pb.input, w);
  }
  if (quantize_states) {
    for (auto& m : states) {
      for (double& x : m.data()) x = to_float_precision(x);
    }
  }

  PlantedInstance out;
  out.spec = spec;
  out.truth = std::move(truth);
  out.traces.instance_id = spec.instance_id;
  out.traces.sensor_answer = spec.sensor_answer;
  out.traces.user_answer = spec.user_answer;
  std::array<Vector, 4> finals;
  for (Condition c : kConditions) {
    auto& m = states[index_of(c)];
    const auto last = m.row(l - 1);
    finals[index_of(c)].assign(last.begin(), last.end());
    out.traces.traces[index_of(c)] = LayerTrace{spec.instance_id, c, std::move(m)};
  }
  out.record = make_conflict_record(spec.instance_id, std::move(finals), spec.sensor_answer,
                                    spec.user_answer, model.unembedding(),
                                    model.answer_token_ids());
  return out;
}

std::string_view to_string(Regime r) noexcept {
  switch (r) {
    case Regime::har_like: return "har_like";
    case Regime::casas_like: return "casas_like";
    case Regime::health_like: return "health_like";
  }
  return "?";
}

std::optional<Regime> parse_regime(std::string_view name) noexcept {
  for (Regime r : {Regime::har_like, Regime::casas_like, Regime::health_like}) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

RegimeRanges regime_ranges(Regime r) noexcept {
  switch (r) {
    case Regime::har_like: return {0.03, 0.08, 0.07, 0.17};
    case Regime::casas_like: return {0.08, 0.13, 0.10, 0.17};
    case Regime::health_like: return {0.07, 0.15, 0.027, 0.05};
  }
  return {0.0, 0.0, 0.0, 0.0};
}

std::vector<PlantedInstance> generate_conflict_suite(const ReferenceModel& model,
                                                     const SuiteOptions& o) {
  if (o.count < 1) fail(ErrorCode::domain, "suite count must be at least 1");
  if (!(o.alignment_lo >= 0.0 && o.alignment_lo <= o.alignment_hi && o.alignment_hi <= 1.0)) {
    fail(ErrorCode::domain, "alignment range must lie within [0, 1]");
  }
  if (!(o.epsilon >= 0.0) || !(o.prior_margin_spread >= 0.0) || !(o.interaction_fraction >= 0.0)) {
    fail(ErrorCode::domain, "suite epsilon, spread and interaction fraction must be >= 0");
  }
  const std::size_t l = model.num_layers();
  if (o.fixed_user_layer && *o.fixed_user_layer >= l) {
    fail(ErrorCode::index, "fixed user layer out of range");
  }
  const auto& answers = model.answer_token_ids();
  if (answers.size() < 2) fail(ErrorCode::domain, "conflict suites need at least two answers");
  const RegimeRanges ranges = regime_ranges(o.regime);
  const double sqrt_d = std::sqrt(static_cast<double>(model.hidden_dim()));
  const std::size_t sensor_hi = std::max<std::size_t>(1, l / 2) - 1;
  const std::size_t user_lo = std::min(l - 1, (4 * l) / 5);

  return parallel::map<PlantedInstance>(o.count, [&](std::size_t i) {
    const std::uint64_t seed = o.seed + i;
    Rng rng = make_rng(seed, kSuiteStream);
    std::uniform_int_distribution<std::size_t> pick(0, answers.size() - 1);
    PlantedConflictSpec s;
    s.instance_id = std::string(to_string(o.regime)) + "-" + std::to_string(i);
    s.seed = seed;
    s.sensor_answer = answers[pick(rng)];
    do {
      s.user_answer = answers[pick(rng)];
    } while (s.user_answer == s.sensor_answer);
    s.target_cir_sensor = uniform(ranges.cir_sensor_lo, ranges.cir_sensor_hi, rng);
    s.target_cir_user = uniform(ranges.cir_user_lo, ranges.cir_user_hi, rng);
    const double align_s = uniform(o.alignment_lo, o.alignment_hi, rng);
    const double align_u = uniform(o.alignment_lo, o.alignment_hi, rng);
    s.prior_margin = o.prior_margin_mean + o.prior_margin_spread * standard_normal(1, rng)[0];
    s.other_answer_logit = o.other_answer_logit;
    s.write_layer_sensor = std::uniform_int_distribution<std::size_t>(0, sensor_hi)(rng);
    s.write_layer_user = o.fixed_user_layer
                             ? *o.fixed_user_layer
                             : std::uniform_int_distribution<std::size_t>(user_lo, l - 1)(rng);
    const double inter_share = uniform(-o.interaction_fraction, o.interaction_fraction, rng);
    s.epsilon_scale = o.epsilon;

    const PlantedBaseline pb = plant_baseline(model, s);
    const double dn = kernels::norm(decision_direction(pb.subspace, s.sensor_answer, s.user_answer));
    s.force_sensor = align_s * sqrt_d * dn * s.target_cir_sensor * o.epsilon;
    s.force_user = align_u * sqrt_d * dn * s.target_cir_user * o.epsilon;
    s.interaction = inter_share * s.force_user;
    return run_conditions(model, s, o.quantize_states);
  });
}

}  // namespace aaud
