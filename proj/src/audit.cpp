#include "aaud/audit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "json.hpp"

#include "aaud/error.hpp"
#include "aaud/parallel.hpp"

namespace aaud {

using ojson = nlohmann::ordered_json;

std::vector<InstanceAnalysis> analyze(std::span<ConflictRecord> records,
                                      const EffectiveUnembedding& unemb,
                                      std::span<const TokenId> answer_token_ids, double rank_tol) {
  return parallel::map<InstanceAnalysis>(records.size(), [&](std::size_t i) {
    ConflictRecord& rec = records[i];
    InstanceAnalysis a;
    a.subspace = build_answer_subspace(unemb, rec.state(Condition::baseline), answer_token_ids,
                                       rank_tol);
    attach_decompositions(rec, a.subspace);
    a.report = predict_joint_margin(rec, a.subspace, unemb);
    return a;
  });
}

namespace {

bool is_answer(std::span<const TokenId> answers, TokenId t) {
  return std::find(answers.begin(), answers.end(), t) != answers.end();
}

template <class F>
TestOutcome attempt(F&& f) {
  TestOutcome out;
  try {
    out.result = f();
  } catch (const Error& e) {
    out.error = std::string(to_string(e.code())) + ": " + e.what();
  }
  return out;
}

RunMetadata make_metadata(std::string command, std::string model_label, std::size_t n,
                          const RunOptions& options) {
  return {std::move(command), std::move(model_label), n, options};
}

}  // namespace

AuditAggregates aggregate(std::span<const AuditRow> rows) {
  if (rows.empty()) fail(ErrorCode::domain, "no rows to aggregate");
  AuditAggregates a;
  TrustSummary& t = a.trust;
  t.n = rows.size();
  std::vector<double> aais;
  std::vector<std::pair<double, double>> cir_pairs;
  std::vector<double> predicted, observed;
  double cir_s = 0.0, cir_u = 0.0;
  for (const auto& r : rows) {
    const TokenId choice = r.decisions[index_of(Condition::joint)];
    if (choice == r.sensor_answer) {
      ++t.count_sensor;
    } else if (choice == r.user_answer) {
      ++t.count_user;
    } else {
      ++t.count_other;
    }
    if (r.aai_degenerate) {
      ++a.aai_degenerate;
    } else {
      aais.push_back(r.aai);
    }
    const bool cir_ok = !r.cir_degenerate[index_of(Condition::sensor_only)] &&
                        !r.cir_degenerate[index_of(Condition::user_only)];
    if (cir_ok) {
      cir_pairs.emplace_back(r.cir_sensor, r.cir_user);
      cir_s += r.cir_sensor;
      cir_u += r.cir_user;
    } else {
      ++a.cir_degenerate;
    }
    predicted.push_back(r.predicted_joint_margin);
    observed.push_back(r.observed_joint_margin);
    if (r.inversion_error_predicted) ++a.inversion_predicted;
    if (r.observed_joint_margin < 0.0) ++a.inversion_observed;
    if (r.high_epsilon) ++a.high_epsilon;
  }
  const double n = static_cast<double>(t.n);
  t.trust_sensor = static_cast<double>(t.count_sensor) / n;
  t.trust_user = static_cast<double>(t.count_user) / n;
  t.trust_other = static_cast<double>(t.count_other) / n;
  t.baai = t.trust_sensor - t.trust_user;

  a.trust_sign_test = attempt([&] {
    return stats::binomial_sign_test(t.count_sensor, t.count_sensor + t.count_user, 0.5);
  });
  const stats::Summary s = stats::describe(aais);
  a.aai_n = s.n;
  a.aai_mean = s.mean;
  a.aai_std = s.stddev;
  a.aai_t_test = attempt([&] { return stats::one_sample_t(aais, 0.0); });
  a.cir_n = cir_pairs.size();
  if (a.cir_n > 0) {
    a.cir_sensor_mean = cir_s / static_cast<double>(a.cir_n);
    a.cir_user_mean = cir_u / static_cast<double>(a.cir_n);
  }
  a.cir_wilcoxon = attempt([&] { return stats::wilcoxon_signed_rank(cir_pairs); });
  a.margin_pearson = attempt([&] { return stats::pearson(predicted, observed); });
  return a;
}

AuditReport run_audit(AssembledSuite& suite, std::string model_label, const RunOptions& options) {
  const auto analyses =
      analyze(suite.records, suite.unembedding, suite.answer_token_ids, options.rank_tol);
  AuditReport rep;
  rep.metadata = make_metadata("audit", std::move(model_label), suite.records.size(), options);
  rep.rows.reserve(suite.records.size());
  for (std::size_t i = 0; i < suite.records.size(); ++i) {
    const ConflictRecord& rec = suite.records[i];
    const InstanceAnalysis& an = analyses[i];
    AuditRow r;
    r.instance_id = rec.instance_id;
    r.sensor_answer = rec.sensor_answer;
    r.user_answer = rec.user_answer;
    r.decisions = rec.decisions;
    r.answer_decisions = rec.answer_decisions;
    r.joint_other = !is_answer(suite.answer_token_ids, rec.decision(Condition::joint));
    r.effective_rank = an.subspace.effective_rank;
    for (Condition c : {Condition::sensor_only, Condition::user_only, Condition::joint}) {
      const auto& dec = rec.decomposition(c);
      r.cir_degenerate[index_of(c)] = dec.degenerate;
      r.epsilon[index_of(c)] = dec.epsilon;
      if (dec.epsilon > kHighEpsilon) r.high_epsilon = true;
    }
    r.cir_sensor = rec.decomposition(Condition::sensor_only).cir;
    r.cir_user = rec.decomposition(Condition::user_only).cir;
    r.cir_joint = rec.decomposition(Condition::joint).cir;
    const AuthorityReport& a = an.report;
    r.force_sensor = a.force_sensor;
    r.force_user = a.force_user;
    r.interaction = a.interaction;
    r.aai = a.aai.value;
    r.aai_degenerate = a.aai.degenerate;
    r.baseline_margin = a.baseline_margin;
    r.predicted_joint_margin = a.predicted_joint_margin;
    r.observed_joint_margin = a.observed_joint_margin;
    r.linearized_joint_margin = a.linearized_joint_margin;
    r.inversion_error_predicted = a.inversion_error_predicted;
    rep.rows.push_back(std::move(r));
  }
  rep.aggregates = aggregate(rep.rows);
  return rep;
}

namespace {

std::uint64_t kind_stream(InterventionKind k, std::uint64_t trial) {
  return (static_cast<std::uint64_t>(k) + 1) << 32 | trial;
}

void require_full_traces(const AssembledSuite& suite) {
  if (!suite.full_traces) {
    fail(ErrorCode::manifest, "dump lacks full layer traces for every condition");
  }
}

std::vector<Vector> importances(const AssembledSuite& suite, const EffectiveUnembedding& unemb,
                                PatchMode mode) {
  return parallel::map<Vector>(suite.traces.size(), [&](std::size_t i) {
    const TraceSet& s = suite.traces[i];
    return layer_importance(s.get(Condition::joint), s.get(Condition::baseline), unemb,
                            s.sensor_answer, s.user_answer, mode);
  });
}

}  // namespace

InterventionReport run_interventions(AssembledSuite& suite, std::string model_label,
                                     std::span<const InterventionKind> kinds, bool layer_patching,
                                     const RunOptions& options) {
  if (options.trials < 1) fail(ErrorCode::domain, "trials must be at least 1");
  if (layer_patching) require_full_traces(suite);
  const auto analyses =
      analyze(suite.records, suite.unembedding, suite.answer_token_ids, options.rank_tol);
  const auto& unemb = suite.unembedding;
  const std::size_t n = suite.records.size();

  InterventionReport rep;
  rep.metadata = make_metadata("intervene", std::move(model_label), n, options);

  for (InterventionKind kind : kinds) {
    const bool random = kind == InterventionKind::ablate_random || kind == InterventionKind::inject_random;
    const std::size_t trials = random ? options.trials : 1;
    auto per_instance = parallel::map<std::vector<InterventionResult>>(n, [&](std::size_t i) {
      const ConflictRecord& rec = suite.records[i];
      const AnswerSubspace& sub = analyses[i].subspace;
      const std::uint64_t seed = options.seed + i;
      std::vector<InterventionResult> out;
      auto injection_magnitude = [&] {
        return options.magnitude ? *options.magnitude
                                 : theory_injection_magnitude(rec, sub, unemb, options.safety);
      };
      for (std::uint64_t t = 0; t < trials; ++t) {
        const std::uint64_t stream = kind_stream(kind, t);
        InterventionResult r;
        switch (kind) {
          case InterventionKind::ablate_user_predictive:
            r = ablate_user_predictive(rec, unemb);
            break;
          case InterventionKind::ablate_null:
            r = ablate_control(rec, unemb, AblationControl::null_component, seed);
            break;
          case InterventionKind::ablate_random:
            r = ablate_control(rec, unemb, AblationControl::random_matched, seed, stream);
            break;
          case InterventionKind::inject_theory:
            r = inject(rec, sub, unemb, InjectionDirection::theory, injection_magnitude(), seed);
            break;
          case InterventionKind::inject_random:
            r = inject(rec, sub, unemb, InjectionDirection::random, injection_magnitude(), seed,
                       stream);
            break;
        }
        r.trial = t;
        out.push_back(std::move(r));
      }
      return out;
    });

    KindSummary s;
    s.kind = kind;
    std::size_t correct_before = 0, correct_after = 0;
    double magnitude = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& r : per_instance[i]) {
        const TokenId as = suite.records[i].sensor_answer;
        ++s.n;
        if (r.pre_decision != as) ++s.wrong_before;
        if (r.pre_decision == as) ++correct_before;
        if (r.post_decision == as) ++correct_after;
        if (r.flipped) ++s.flips;
        magnitude += r.magnitude;
        rep.results.push_back(std::move(r));
      }
    }
    const double total = static_cast<double>(s.n);
    s.flip_rate = s.wrong_before ? static_cast<double>(s.flips) / static_cast<double>(s.wrong_before) : 0.0;
    s.accuracy_before = static_cast<double>(correct_before) / total;
    s.accuracy_after = static_cast<double>(correct_after) / total;
    s.mean_magnitude = magnitude / total;
    rep.summaries.push_back(s);
  }

  if (layer_patching) {
    const auto imp = importances(suite, unemb, options.patch_mode);
    LayerSummary ls;
    ls.ranked = rank_layers(imp);
    const std::size_t l = ls.ranked.size();
    ls.mean_importance.assign(l, 0.0);
    for (const auto& v : imp) {
      for (std::size_t k = 0; k < l; ++k) ls.mean_importance[k] += v[k];
    }
    for (double& x : ls.mean_importance) x /= static_cast<double>(imp.size());
    for (std::size_t k = 0; k <= l; ++k) {
      ls.cumulative_accuracy.push_back(
          cumulative_ablation(suite.traces, unemb, ls.ranked, k, options.patch_mode));
    }
    rep.layers = std::move(ls);
  }
  return rep;
}

GacReport run_gac(AssembledSuite& suite, std::string model_label, const RunOptions& options) {
  require_full_traces(suite);
  if (!(options.alpha >= 0.0 && options.alpha <= 1.0)) fail(ErrorCode::domain, "alpha must lie in [0, 1]");
  const auto& unemb = suite.unembedding;
  const std::size_t n = suite.records.size();
  const std::size_t l = suite.traces.front().get(Condition::joint).num_layers();
  if (options.layers < 1 || options.layers > l) {
    fail(ErrorCode::domain, "layer count must lie in [1, " + std::to_string(l) + "]");
  }

  GacReport rep;
  rep.metadata = make_metadata("gac", std::move(model_label), n, options);
  const auto ranked = rank_layers(importances(suite, unemb, options.patch_mode));
  rep.critical_layers.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(options.layers));

  rep.rows = parallel::map<GacRow>(n, [&](std::size_t i) {
    const TraceSet& s = suite.traces[i];
    const ConflictRecord& rec = suite.records[i];
    auto decide = [&](Condition source) {
      const ResidualState h(gac(s.get(source), s.get(Condition::baseline), rep.critical_layers,
                                options.alpha, options.patch_mode));
      return argmax(logits(h, unemb));
    };
    GacRow r;
    r.instance_id = rec.instance_id;
    r.sensor_answer = rec.sensor_answer;
    r.joint_decision = rec.decision(Condition::joint);
    r.gac_decision = decide(Condition::joint);
    r.sensor_only_decision = rec.decision(Condition::sensor_only);
    r.sensor_only_gac_decision = decide(Condition::sensor_only);
    return r;
  });

  std::size_t joint = 0, with_gac = 0, base = 0, nc = 0, nc_gac = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const GacRow& r = rep.rows[i];
    joint += r.joint_decision == r.sensor_answer;
    with_gac += r.gac_decision == r.sensor_answer;
    base += suite.records[i].decision(Condition::baseline) == r.sensor_answer;
    nc += r.sensor_only_decision == r.sensor_answer;
    nc_gac += r.sensor_only_gac_decision == r.sensor_answer;
  }
  const double total = static_cast<double>(n);
  rep.accuracy_joint = static_cast<double>(joint) / total;
  rep.accuracy_gac = static_cast<double>(with_gac) / total;
  rep.accuracy_baseline = static_cast<double>(base) / total;
  rep.nonconflict_accuracy = static_cast<double>(nc) / total;
  rep.nonconflict_accuracy_gac = static_cast<double>(nc_gac) / total;
  return rep;
}

// ---------------------------------------------------------------- rendering

namespace {

ojson metadata_json(const RunMetadata& m, std::string_view csv_version) {
  ojson j;
  j["tool"] = "aaud";
  j["tool_version"] = kToolVersion;
  j["report_schema_version"] = kReportSchemaVersion;
  j["manifest_schema_version"] = kManifestSchemaVersion;
  j["csv_columns_version"] = csv_version;
  j["command"] = m.command;
  j["model_label"] = m.model_label;
  j["instances"] = m.instances;
  ojson o;
  o["seed"] = m.options.seed;
  o["rank_tol"] = m.options.rank_tol;
  o["alpha"] = m.options.alpha;
  o["layers"] = m.options.layers;
  o["safety"] = m.options.safety;
  o["trials"] = m.options.trials;
  o["patch_mode"] = to_string(m.options.patch_mode);
  o["magnitude"] = m.options.magnitude ? ojson(*m.options.magnitude) : ojson(nullptr);
  o["high_epsilon_threshold"] = kHighEpsilon;
  j["options"] = std::move(o);
  return j;
}

ojson test_json(const TestOutcome& t) {
  ojson j;
  if (!t.result) {
    j["error"] = t.error;
    return j;
  }
  const auto& r = *t.result;
  j["method"] = stats::to_string(r.method);
  j["statistic"] = r.statistic;
  j["p_value"] = r.p_value;
  j["effect_size"] = r.effect_size ? ojson(*r.effect_size) : ojson(nullptr);
  j["n"] = r.n;
  return j;
}

ojson by_condition(const std::array<TokenId, 4>& v) {
  ojson j;
  for (Condition c : kConditions) j[std::string(to_string(c))] = v[index_of(c)];
  return j;
}

std::string num(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string num(std::uint64_t x) { return std::to_string(x); }
std::string flag(bool b) { return b ? "1" : "0"; }

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  return line + "\n";
}

std::string csv_text(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string to_json(const AuditReport& rep) {
  ojson j;
  j["metadata"] = metadata_json(rep.metadata, kAuditCsvVersion);
  const auto& a = rep.aggregates;
  ojson agg;
  agg["n"] = a.trust.n;
  agg["trust_sensor"] = a.trust.trust_sensor;
  agg["trust_user"] = a.trust.trust_user;
  agg["trust_other"] = a.trust.trust_other;
  agg["baai"] = a.trust.baai;
  agg["count_sensor"] = a.trust.count_sensor;
  agg["count_user"] = a.trust.count_user;
  agg["count_other"] = a.trust.count_other;
  agg["trust_sign_test"] = test_json(a.trust_sign_test);
  agg["aai_n"] = a.aai_n;
  agg["aai_degenerate"] = a.aai_degenerate;
  agg["aai_mean"] = a.aai_mean;
  agg["aai_std"] = a.aai_std;
  agg["aai_t_test"] = test_json(a.aai_t_test);
  agg["cir_n"] = a.cir_n;
  agg["cir_degenerate"] = a.cir_degenerate;
  agg["cir_sensor_mean"] = a.cir_sensor_mean;
  agg["cir_user_mean"] = a.cir_user_mean;
  agg["cir_wilcoxon"] = test_json(a.cir_wilcoxon);
  agg["margin_pearson"] = test_json(a.margin_pearson);
  agg["inversion_predicted"] = a.inversion_predicted;
  agg["inversion_observed"] = a.inversion_observed;
  agg["high_epsilon"] = a.high_epsilon;
  j["aggregates"] = std::move(agg);

  ojson rows = ojson::array();
  for (const auto& r : rep.rows) {
    ojson x;
    x["instance_id"] = r.instance_id;
    x["sensor_answer"] = r.sensor_answer;
    x["user_answer"] = r.user_answer;
    x["decisions"] = by_condition(r.decisions);
    x["answer_decisions"] = by_condition(r.answer_decisions);
    x["joint_other"] = r.joint_other;
    x["effective_rank"] = r.effective_rank;
    x["cir_sensor"] = r.cir_sensor;
    x["cir_user"] = r.cir_user;
    x["cir_joint"] = r.cir_joint;
    ojson deg, eps;
    for (Condition c : {Condition::sensor_only, Condition::user_only, Condition::joint}) {
      deg[std::string(to_string(c))] = r.cir_degenerate[index_of(c)];
      eps[std::string(to_string(c))] = r.epsilon[index_of(c)];
    }
    x["cir_degenerate"] = std::move(deg);
    x["epsilon"] = std::move(eps);
    x["high_epsilon"] = r.high_epsilon;
    x["force_sensor"] = r.force_sensor;
    x["force_user"] = r.force_user;
    x["interaction"] = r.interaction;
    x["aai"] = r.aai;
    x["aai_degenerate"] = r.aai_degenerate;
    x["baseline_margin"] = r.baseline_margin;
    x["predicted_joint_margin"] = r.predicted_joint_margin;
    x["observed_joint_margin"] = r.observed_joint_margin;
    x["linearized_joint_margin"] = r.linearized_joint_margin;
    x["inversion_error_predicted"] = r.inversion_error_predicted;
    rows.push_back(std::move(x));
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string to_csv(const AuditReport& rep) {
  std::string out = "# aaud " + std::string(kAuditCsvVersion) + "\n";
  out += csv_join({"instance_id", "sensor_answer", "user_answer", "decision_baseline",
                   "decision_sensor_only", "decision_user_only", "decision_joint",
                   "answer_decision_joint", "joint_other", "effective_rank", "cir_sensor",
                   "cir_user", "cir_joint", "cir_degenerate_sensor", "cir_degenerate_user",
                   "cir_degenerate_joint", "epsilon_sensor", "epsilon_user", "epsilon_joint",
                   "high_epsilon", "force_sensor", "force_user", "interaction", "aai",
                   "aai_degenerate", "baseline_margin", "predicted_joint_margin",
                   "observed_joint_margin", "linearized_joint_margin",
                   "inversion_error_predicted"});
  const auto s = index_of(Condition::sensor_only);
  const auto u = index_of(Condition::user_only);
  const auto jn = index_of(Condition::joint);
  for (const auto& r : rep.rows) {
    out += csv_join({csv_text(r.instance_id), num(r.sensor_answer), num(r.user_answer),
                     num(r.decisions[0]), num(r.decisions[s]), num(r.decisions[u]),
                     num(r.decisions[jn]), num(r.answer_decisions[jn]), flag(r.joint_other),
                     num(r.effective_rank), num(r.cir_sensor), num(r.cir_user), num(r.cir_joint),
                     flag(r.cir_degenerate[s]), flag(r.cir_degenerate[u]),
                     flag(r.cir_degenerate[jn]), num(r.epsilon[s]), num(r.epsilon[u]),
                     num(r.epsilon[jn]), flag(r.high_epsilon), num(r.force_sensor),
                     num(r.force_user), num(r.interaction), num(r.aai), flag(r.aai_degenerate),
                     num(r.baseline_margin), num(r.predicted_joint_margin),
                     num(r.observed_joint_margin), num(r.linearized_joint_margin),
                     flag(r.inversion_error_predicted)});
  }
  return out;
}

std::string to_json(const InterventionReport& rep) {
  ojson j;
  j["metadata"] = metadata_json(rep.metadata, kInterventionCsvVersion);
  ojson sums = ojson::array();
  for (const auto& s : rep.summaries) {
    ojson x;
    x["kind"] = to_string(s.kind);
    x["n"] = s.n;
    x["wrong_before"] = s.wrong_before;
    x["flips"] = s.flips;
    x["flip_rate"] = s.flip_rate;
    x["accuracy_before"] = s.accuracy_before;
    x["accuracy_after"] = s.accuracy_after;
    x["mean_magnitude"] = s.mean_magnitude;
    sums.push_back(std::move(x));
  }
  j["summaries"] = std::move(sums);
  if (rep.layers) {
    ojson l;
    l["patch_mode"] = to_string(rep.metadata.options.patch_mode);
    l["mean_importance"] = rep.layers->mean_importance;
    l["ranked"] = rep.layers->ranked;
    l["cumulative_accuracy"] = rep.layers->cumulative_accuracy;
    j["layers"] = std::move(l);
  } else {
    j["layers"] = nullptr;
  }
  ojson rows = ojson::array();
  for (const auto& r : rep.results) {
    ojson x;
    x["instance_id"] = r.instance_id;
    x["kind"] = to_string(r.kind);
    x["trial"] = r.trial;
    x["seed"] = r.seed ? ojson(*r.seed) : ojson(nullptr);
    x["pre_decision"] = r.pre_decision;
    x["post_decision"] = r.post_decision;
    x["flipped"] = r.flipped;
    x["magnitude"] = r.magnitude;
    x["pre_margin"] = r.pre_margin;
    x["post_margin"] = r.post_margin;
    rows.push_back(std::move(x));
  }
  j["results"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string to_csv(const InterventionReport& rep) {
  std::string out = "# aaud " + std::string(kInterventionCsvVersion) + "\n";
  out += csv_join({"instance_id", "kind", "trial", "seed", "pre_decision", "post_decision",
                   "flipped", "magnitude", "pre_margin", "post_margin"});
  for (const auto& r : rep.results) {
    out += csv_join({csv_text(r.instance_id), std::string(to_string(r.kind)), num(r.trial),
                     r.seed ? num(*r.seed) : std::string(), num(r.pre_decision),
                     num(r.post_decision), flag(r.flipped), num(r.magnitude), num(r.pre_margin),
                     num(r.post_margin)});
  }
  return out;
}

std::string to_json(const GacReport& rep) {
  ojson j;
  j["metadata"] = metadata_json(rep.metadata, kGacCsvVersion);
  j["critical_layers"] = rep.critical_layers;
  j["accuracy_joint"] = rep.accuracy_joint;
  j["accuracy_gac"] = rep.accuracy_gac;
  j["accuracy_baseline"] = rep.accuracy_baseline;
  j["nonconflict_accuracy"] = rep.nonconflict_accuracy;
  j["nonconflict_accuracy_gac"] = rep.nonconflict_accuracy_gac;
  ojson rows = ojson::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"instance_id", r.instance_id},
                    {"sensor_answer", r.sensor_answer},
                    {"joint_decision", r.joint_decision},
                    {"gac_decision", r.gac_decision},
                    {"sensor_only_decision", r.sensor_only_decision},
                    {"sensor_only_gac_decision", r.sensor_only_gac_decision}});
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string to_csv(const GacReport& rep) {
  std::string out = "# aaud " + std::string(kGacCsvVersion) + "\n";
  out += csv_join({"instance_id", "sensor_answer", "joint_decision", "gac_decision",
                   "sensor_only_decision", "sensor_only_gac_decision"});
  for (const auto& r : rep.rows) {
    out += csv_join({csv_text(r.instance_id), num(r.sensor_answer), num(r.joint_decision),
                     num(r.gac_decision), num(r.sensor_only_decision),
                     num(r.sensor_only_gac_decision)});
  }
  return out;
}

// -------------------------------------------------------------------- synth

SynthConfig default_synth_config() { return SynthConfig{}; }

namespace {

[[noreturn]] void bad_config(const std::string& what) {
  fail(ErrorCode::domain, "config: " + what);
}

void check_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) bad_config(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      bad_config("unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void read(const nlohmann::json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad_config(std::string("field '") + key + "' has the wrong type");
  }
}

std::string answer_label(std::size_t i) {
  if (i < 26) return std::string(1, static_cast<char>('A' + i));
  return "T" + std::to_string(i);
}

}  // namespace

SynthConfig parse_synth_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    bad_config(std::string("invalid JSON: ") + e.what());
  }
  SynthConfig c;
  check_keys(j, {"model_label", "model", "suite", "per_layer_tensors"}, "config");
  read(j, "model_label", c.model_label);
  read(j, "per_layer_tensors", c.per_layer_tensors);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"hidden_dim", "num_layers", "vocab_size", "answer_count",
                   "nonlinearity_strength", "seed"}, "model");
    read(m, "hidden_dim", c.model.hidden_dim);
    read(m, "num_layers", c.model.num_layers);
    read(m, "vocab_size", c.model.vocab_size);
    read(m, "answer_count", c.model.answer_count);
    read(m, "nonlinearity_strength", c.model.nonlinearity_strength);
    read(m, "seed", c.model.seed);
  }
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    check_keys(s, {"regime", "count", "seed", "epsilon", "alignment_lo", "alignment_hi",
                   "prior_margin_mean", "prior_margin_spread", "other_answer_logit",
                   "interaction_fraction", "fixed_user_layer"}, "suite");
    if (s.contains("regime")) {
      std::string name;
      read(s, "regime", name);
      const auto r = parse_regime(name);
      if (!r) bad_config("unknown regime '" + name + "'");
      c.suite.regime = *r;
    }
    read(s, "count", c.suite.count);
    read(s, "seed", c.suite.seed);
    read(s, "epsilon", c.suite.epsilon);
    read(s, "alignment_lo", c.suite.alignment_lo);
    read(s, "alignment_hi", c.suite.alignment_hi);
    read(s, "prior_margin_mean", c.suite.prior_margin_mean);
    read(s, "prior_margin_spread", c.suite.prior_margin_spread);
    read(s, "other_answer_logit", c.suite.other_answer_logit);
    read(s, "interaction_fraction", c.suite.interaction_fraction);
    if (s.contains("fixed_user_layer") && !s.at("fixed_user_layer").is_null()) {
      std::size_t layer = 0;
      read(s, "fixed_user_layer", layer);
      c.suite.fixed_user_layer = layer;
    }
  }
  validate(c.model);
  return c;
}

SynthOutput run_synth(const SynthConfig& config) {
  const ReferenceModel model = build_reference_model(config.model);
  SuiteOptions opts = config.suite;
  opts.quantize_states = true;
  auto suite = generate_conflict_suite(model, opts);

  const std::size_t d = model.hidden_dim();
  const std::size_t l = model.num_layers();
  const std::size_t v = config.model.vocab_size;
  const auto& answers = model.answer_token_ids();

  SynthOutput out;
  out.tensors.add("unembed/rows", dump::make_tensor({v, d}, model.raw_rows().data()));
  out.tensors.add("unembed/gamma", dump::make_tensor({d}, model.gamma()));
  out.tensors.add("unembed/biases", dump::make_tensor({v}, model.biases()));

  ExperimentManifest& m = out.manifest;
  m.model_label = config.model_label;
  m.hidden_dim = d;
  m.num_layers = l;
  m.vocab_size = v;
  m.unembedding_rows = "unembed/rows";
  m.unembedding_gamma = "unembed/gamma";
  m.unembedding_biases = "unembed/biases";
  auto label_of = [&](TokenId t) {
    const auto it = std::find(answers.begin(), answers.end(), t);
    return answer_label(static_cast<std::size_t>(it - answers.begin()));
  };
  for (std::size_t i = 0; i < answers.size(); ++i) m.answers.push_back({answer_label(i), answers[i]});

  for (const auto& inst : suite) {
    ManifestInstance mi;
    mi.instance_id = inst.spec.instance_id;
    mi.sensor_answer = label_of(inst.spec.sensor_answer);
    mi.user_answer = label_of(inst.spec.user_answer);
    for (Condition c : kConditions) {
      const Matrix& states = inst.traces.get(c).states;
      const std::string base = mi.instance_id + "/" + std::string(to_string(c));
      if (config.per_layer_tensors) {
        std::vector<std::string> names;
        for (std::size_t layer = 0; layer < l; ++layer) {
          names.push_back(base + "/" + std::to_string(layer));
          out.tensors.add(names.back(), dump::make_tensor({d}, states.row(layer)));
        }
        mi.tensors[index_of(c)] = std::move(names);
      } else {
        out.tensors.add(base, dump::make_tensor({l, d}, states.data()));
        mi.tensors[index_of(c)] = base;
      }
    }
    m.instances.push_back(std::move(mi));
  }

  std::vector<ConflictRecord> records;
  records.reserve(suite.size());
  for (const auto& inst : suite) records.push_back(inst.record);
  const auto analyses = analyze(records, model.unembedding(), answers, kDefaultRankTol);

  ojson g;
  g["schema_version"] = kReportSchemaVersion;
  g["model_label"] = config.model_label;
  g["model"] = {{"hidden_dim", d},
                {"num_layers", l},
                {"vocab_size", v},
                {"answer_count", config.model.answer_count},
                {"nonlinearity_strength", config.model.nonlinearity_strength},
                {"seed", config.model.seed}};
  g["suite"] = {{"regime", to_string(opts.regime)},
                {"count", opts.count},
                {"seed", opts.seed},
                {"epsilon", opts.epsilon},
                {"alignment_lo", opts.alignment_lo},
                {"alignment_hi", opts.alignment_hi},
                {"prior_margin_mean", opts.prior_margin_mean},
                {"prior_margin_spread", opts.prior_margin_spread},
                {"other_answer_logit", opts.other_answer_logit},
                {"interaction_fraction", opts.interaction_fraction},
                {"fixed_user_layer",
                 opts.fixed_user_layer ? ojson(*opts.fixed_user_layer) : ojson(nullptr)}};
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& inst = suite[i];
    const auto& a = analyses[i].report;
    ojson planted = {{"force_sensor", inst.truth.force_sensor},
                     {"force_user", inst.truth.force_user},
                     {"interaction", inst.truth.interaction},
                     {"aai", inst.truth.aai},
                     {"target_cir_sensor", inst.truth.target_cir_sensor},
                     {"target_cir_user", inst.truth.target_cir_user},
                     {"write_layer_sensor", inst.truth.write_layer_sensor},
                     {"write_layer_user", inst.truth.write_layer_user},
                     {"epsilon_scale", inst.spec.epsilon_scale},
                     {"prior_margin", inst.spec.prior_margin}};
    ojson measured = {{"aai", a.aai.value},
                      {"force_sensor", a.force_sensor},
                      {"force_user", a.force_user},
                      {"interaction", a.interaction},
                      {"cir_sensor", records[i].decomposition(Condition::sensor_only).cir},
                      {"cir_user", records[i].decomposition(Condition::user_only).cir},
                      {"joint_decision", records[i].decision(Condition::joint)}};
    rows.push_back({{"instance_id", inst.spec.instance_id},
                    {"sensor_answer", label_of(inst.spec.sensor_answer)},
                    {"user_answer", label_of(inst.spec.user_answer)},
                    {"planted", std::move(planted)},
                    {"measured", std::move(measured)}});
  }
  g["instances"] = std::move(rows);
  out.ground_truth_json = g.dump(2) + "\n";
  return out;
}

}  // namespace aaud
