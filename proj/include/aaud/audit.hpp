#pragma once

// Whole-suite runs behind the command-line tool: audit, interventions, GAC
// and synthetic-suite generation, plus their JSON and CSV renderings.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aaud/authority.hpp"
#include "aaud/dumpio.hpp"
#include "aaud/geometry.hpp"
#include "aaud/interventions.hpp"
#include "aaud/refmodel.hpp"
#include "aaud/stats.hpp"

namespace aaud {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kAuditCsvVersion = "audit-rows-v1";
inline constexpr std::string_view kInterventionCsvVersion = "intervention-rows-v1";
inline constexpr std::string_view kGacCsvVersion = "gac-rows-v1";

struct RunOptions {
  std::uint64_t seed = 0;
  double rank_tol = kDefaultRankTol;
  double alpha = 0.1;
  std::size_t layers = 5;
  double safety = 1.1;
  std::size_t trials = 1;
  PatchMode patch_mode = PatchMode::block;
  std::optional<double> magnitude;  // fixed injection magnitude instead of the required one
};

struct InstanceAnalysis {
  AnswerSubspace subspace;
  AuthorityReport report;
};

/// Builds each record's baseline answer subspace, attaches its
/// decompositions and evaluates the joint-margin decomposition.
std::vector<InstanceAnalysis> analyze(std::span<ConflictRecord> records,
                                      const EffectiveUnembedding& unemb,
                                      std::span<const TokenId> answer_token_ids, double rank_tol);

struct AuditRow {
  std::string instance_id;
  TokenId sensor_answer = 0;
  TokenId user_answer = 0;
  std::array<TokenId, 4> decisions{};
  std::array<TokenId, 4> answer_decisions{};
  bool joint_other = false;  // full-vocabulary joint decision is not an answer token
  std::size_t effective_rank = 0;
  double cir_sensor = 0.0;
  double cir_user = 0.0;
  double cir_joint = 0.0;
  std::array<bool, 4> cir_degenerate{};
  std::array<double, 4> epsilon{};
  bool high_epsilon = false;
  double force_sensor = 0.0;
  double force_user = 0.0;
  double interaction = 0.0;
  double aai = 0.0;
  bool aai_degenerate = false;
  double baseline_margin = 0.0;
  double predicted_joint_margin = 0.0;
  double observed_joint_margin = 0.0;
  double linearized_joint_margin = 0.0;
  bool inversion_error_predicted = false;
};

struct TestOutcome {
  std::optional<stats::TestResult> result;
  std::string error;  // why the test could not run
};

struct AuditAggregates {
  TrustSummary trust;
  TestOutcome trust_sign_test;  // binomial on a_s vs a_u counts, p0 = 0.5
  std::size_t aai_n = 0;
  std::size_t aai_degenerate = 0;
  double aai_mean = 0.0;
  double aai_std = 0.0;
  TestOutcome aai_t_test;  // against 0
  std::size_t cir_n = 0;
  std::size_t cir_degenerate = 0;
  double cir_sensor_mean = 0.0;
  double cir_user_mean = 0.0;
  TestOutcome cir_wilcoxon;  // pairs (CIR_s, CIR_u)
  TestOutcome margin_pearson;  // predicted vs observed joint margin
  std::size_t inversion_predicted = 0;
  std::size_t inversion_observed = 0;  // observed joint margin < 0
  std::size_t high_epsilon = 0;
};

/// Aggregates depend on the rows alone.
AuditAggregates aggregate(std::span<const AuditRow> rows);

struct RunMetadata {
  std::string command;
  std::string model_label;
  std::size_t instances = 0;
  RunOptions options;
};

struct AuditReport {
  RunMetadata metadata;
  std::vector<AuditRow> rows;
  AuditAggregates aggregates;
};

AuditReport run_audit(AssembledSuite& suite, std::string model_label, const RunOptions& options);

struct KindSummary {
  InterventionKind kind{};
  std::size_t n = 0;
  std::size_t wrong_before = 0;  // pre-decision != a_s
  std::size_t flips = 0;
  double flip_rate = 0.0;        // flips / wrong_before (0 when none were wrong)
  double accuracy_before = 0.0;  // fraction deciding a_s
  double accuracy_after = 0.0;
  double mean_magnitude = 0.0;
};

struct LayerSummary {
  Vector mean_importance;
  std::vector<std::size_t> ranked;
  std::vector<double> cumulative_accuracy;  // entry k: top-k layers patched, k = 0..L
};

struct InterventionReport {
  RunMetadata metadata;
  std::vector<InterventionResult> results;
  std::vector<KindSummary> summaries;
  std::optional<LayerSummary> layers;
};

InterventionReport run_interventions(AssembledSuite& suite, std::string model_label,
                                     std::span<const InterventionKind> kinds, bool layer_patching,
                                     const RunOptions& options);

struct GacRow {
  std::string instance_id;
  TokenId sensor_answer = 0;
  TokenId joint_decision = 0;
  TokenId gac_decision = 0;
  TokenId sensor_only_decision = 0;
  TokenId sensor_only_gac_decision = 0;
};

struct GacReport {
  RunMetadata metadata;
  std::vector<std::size_t> critical_layers;
  double accuracy_joint = 0.0;
  double accuracy_gac = 0.0;
  double accuracy_baseline = 0.0;
  double nonconflict_accuracy = 0.0;      // sensor_only condition
  double nonconflict_accuracy_gac = 0.0;  // sensor_only interpolated toward baseline
  std::vector<GacRow> rows;
};

/// Critical layers are the top `options.layers` by population mean
/// importance of the joint traces.
GacReport run_gac(AssembledSuite& suite, std::string model_label, const RunOptions& options);

std::string to_json(const AuditReport& report);
std::string to_csv(const AuditReport& report);
std::string to_json(const InterventionReport& report);
std::string to_csv(const InterventionReport& report);
std::string to_json(const GacReport& report);
std::string to_csv(const GacReport& report);

struct SynthConfig {
  std::string model_label = "refmodel";
  ReferenceModelConfig model{256, 24, 64, 4, 0.0, 7};
  SuiteOptions suite;
  bool per_layer_tensors = false;  // one tensor per layer instead of one L x d tensor
};

SynthConfig default_synth_config();
/// Unknown keys are rejected; missing keys keep their defaults.
SynthConfig parse_synth_config(std::string_view json_text);

struct SynthOutput {
  dump::TensorSet tensors;
  ExperimentManifest manifest;
  std::string ground_truth_json;
};

/// Generates a suite with float-rounded states, so the in-memory AAIs in the
/// ground-truth sidecar are the ones an audit of the written files computes.
SynthOutput run_synth(const SynthConfig& config);

}  // namespace aaud
