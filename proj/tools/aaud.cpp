// Command-line front end: audit, intervene, gac, synth.
//
// Exit codes follow the phase that failed: 2 manifest, config or assembly,
// 3 dump decoding, 4 computation, 5 file I/O. Usage errors exit through
// CLI11 with its own codes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "aaud/audit.hpp"
#include "aaud/error.hpp"
#include "aaud/parallel.hpp"

namespace fs = std::filesystem;
using namespace aaud;

namespace {

enum Exit { kOk = 0, kManifest = 2, kDump = 3, kCompute = 4, kIo = 5 };

struct Failure {
  int code;
  std::string message;
};

template <class F>
auto phase(int code, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    const int c = e.code() == ErrorCode::io ? kIo : code;
    throw Failure{c, std::string(to_string(e.code())) + ": " + e.what()};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) {
    throw Failure{kIo, "io: cannot write " + path.string()};
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Failure{kIo, "io: cannot create " + dir.string() + ": " + ec.message()};
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kIo, "io: cannot open " + path.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Inputs {
  std::string manifest;
  std::string dump;
  std::string out;
  std::string format = "json";
};

struct Loaded {
  ExperimentManifest manifest;
  AssembledSuite suite;
};

Loaded load(const Inputs& in) {
  Loaded l;
  l.manifest = phase(kManifest, [&] { return load_manifest(in.manifest); });
  const auto tensors = phase(kDump, [&] { return dump::read_dump(in.dump); });
  l.suite = phase(kManifest, [&] { return assemble_records(l.manifest, tensors); });
  return l;
}

template <class Report>
void emit(const Inputs& in, const std::string& stem, const Report& rep) {
  ensure_dir(in.out);
  if (in.format == "json" || in.format == "both") {
    write_text(fs::path(in.out) / (stem + ".json"), to_json(rep));
  }
  if (in.format == "csv" || in.format == "both") {
    write_text(fs::path(in.out) / (stem + ".csv"), to_csv(rep));
  }
}

void add_inputs(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--manifest", in.manifest, "Experiment manifest (JSON)")->required();
  cmd->add_option("--dump", in.dump, "Tensor dump (AAUD)")->required();
  cmd->add_option("--out", in.out, "Output directory")->required();
  cmd->add_option("--format", in.format, "Report format")
      ->check(CLI::IsMember({"json", "csv", "both"}));
}

void add_common(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--seed", o.seed, "Base seed for random controls");
  cmd->add_option("--rank-tol", o.rank_tol, "Relative rank tolerance for the answer subspace")
      ->check(CLI::PositiveNumber);
}

void add_patch_mode(CLI::App* cmd, std::string& mode) {
  cmd->add_option("--patch-mode", mode, "Layer patching semantics")
      ->check(CLI::IsMember({"block", "state"}));
}

}  // namespace

int main(int argc, char** argv) {
  parallel::configure_from_env();

  CLI::App app{"Authority audit of sensor/user conflicts in residual-stream dumps"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Inputs in;
  RunOptions opts;
  std::string patch_mode = "block";
  std::vector<std::string> kinds;
  bool layer_patching = false;
  double magnitude = 0.0;
  std::string config_path;
  std::string synth_out;

  auto* audit = app.add_subcommand("audit", "Geometry, authority forces and summary statistics");
  add_inputs(audit, in);
  add_common(audit, opts);

  auto* intervene = app.add_subcommand("intervene", "Ablation and injection controls");
  add_inputs(intervene, in);
  add_common(intervene, opts);
  intervene->add_option("--kinds", kinds, "Intervention kinds (default: all)")
      ->check(CLI::IsMember({"ablate_user_predictive", "ablate_random", "ablate_null",
                             "inject_theory", "inject_random"}));
  intervene->add_option("--trials", opts.trials, "Draws per instance for random controls")
      ->check(CLI::PositiveNumber);
  intervene->add_option("--safety", opts.safety, "Multiplier on the required injection magnitude")
      ->check(CLI::Range(1.0, 1e6));
  auto* mag = intervene->add_option("--magnitude", magnitude, "Fixed injection magnitude")
                  ->check(CLI::PositiveNumber);
  intervene->add_flag("--layers-patching", layer_patching,
                      "Also rank layers and run cumulative ablation");
  add_patch_mode(intervene, patch_mode);

  auto* gac_cmd = app.add_subcommand("gac", "Gated authority correction toward the baseline");
  add_inputs(gac_cmd, in);
  add_common(gac_cmd, opts);
  gac_cmd->add_option("--alpha", opts.alpha, "Interpolation weight on the joint run")
      ->check(CLI::Range(0.0, 1.0));
  gac_cmd->add_option("--layers", opts.layers, "Number of critical layers")
      ->check(CLI::PositiveNumber);
  add_patch_mode(gac_cmd, patch_mode);

  auto* synth = app.add_subcommand("synth", "Generate a planted-conflict suite from the reference model");
  synth->add_option("--config", config_path, "Synthesis config (JSON); defaults when omitted");
  synth->add_option("--out", synth_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  opts.patch_mode = *parse_patch_mode(patch_mode);
  if (mag->count() > 0) opts.magnitude = magnitude;

  try {
    if (*audit) {
      auto l = load(in);
      const auto rep = phase(kCompute, [&] { return run_audit(l.suite, l.manifest.model_label, opts); });
      emit(in, "audit", rep);
    } else if (*intervene) {
      std::vector<InterventionKind> ks;
      if (kinds.empty()) {
        ks = {InterventionKind::ablate_user_predictive, InterventionKind::ablate_random,
              InterventionKind::ablate_null, InterventionKind::inject_theory,
              InterventionKind::inject_random};
      }
      for (const auto& k : kinds) ks.push_back(*parse_intervention_kind(k));
      auto l = load(in);
      if (layer_patching && !l.suite.full_traces) {
        throw Failure{kManifest, "manifest: layer patching needs all L layers for every condition"};
      }
      const auto rep = phase(kCompute, [&] {
        return run_interventions(l.suite, l.manifest.model_label, ks, layer_patching, opts);
      });
      emit(in, "interventions", rep);
    } else if (*gac_cmd) {
      auto l = load(in);
      if (!l.suite.full_traces) {
        throw Failure{kManifest, "manifest: GAC needs all L layers for every condition"};
      }
      const auto rep = phase(kCompute, [&] { return run_gac(l.suite, l.manifest.model_label, opts); });
      emit(in, "gac", rep);
    } else if (*synth) {
      const SynthConfig cfg = config_path.empty()
                                  ? default_synth_config()
                                  : phase(kManifest, [&] { return parse_synth_config(read_text(config_path)); });
      const auto out = phase(kCompute, [&] { return run_synth(cfg); });
      ensure_dir(synth_out);
      phase(kIo, [&] {
        dump::write_dump(out.tensors, fs::path(synth_out) / "dump.aaud");
        return 0;
      });
      write_text(fs::path(synth_out) / "manifest.json", manifest_to_json(out.manifest));
      write_text(fs::path(synth_out) / "ground_truth.json", out.ground_truth_json);
    }
  } catch (const Failure& f) {
    std::cerr << "aaud: " << f.message << "\n";
    return f.code;
  }
  return kOk;
}
